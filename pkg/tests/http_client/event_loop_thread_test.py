import asyncio

from pytest import raises

from glpn.http_client.event_loop_thread import EventLoopThread


async def answer(delay: float) -> int:
    await asyncio.sleep(delay)
    return 42


def test_event_loop_thread() -> None:
    thread = EventLoopThread()
    thread.start()
    assert thread.running is True
    assert thread.run_coroutine(answer(0.1)) == 42
    thread.stop()
    assert thread.running is False
    assert thread.loop.is_closed()


def test_context_manager_and_errors() -> None:
    async def fail() -> None:
        raise KeyError("boom")

    with EventLoopThread(daemon=True) as thread:
        assert thread.run_coroutine(answer(0.0)) == 42
        with raises(KeyError):
            thread.run_coroutine(fail())
        # the loop survives a failed coroutine
        assert thread.run_coroutine(answer(0.0)) == 42
    assert thread.running is False
