import json
from pathlib import Path
from typing import Iterable, Iterator, Optional, Tuple, Type, TypeVar, Union

import jsons

from glpn.models import JsValue, JsObject

T = TypeVar("T")

PathLike = Union[str, Path]

# pyright: reportUnknownMemberType=false
# pyright: reportUnknownVariableType=false


def json_load(json_obj: object, cls: Type[T]) -> T:
    return jsons.load(json_obj, cls)  # type: ignore


def json_dump(
    obj: object,
    cls: Optional[type] = None,
) -> JsValue:
    # enums are written by value, the form used in every file this package reads
    return jsons.dump(obj, cls, use_enum_name=False)  # type: ignore


def dumps_stable(value: JsValue) -> str:
    """Canonical text form: sorted keys, shortest round-trip float repr, no trailing whitespace."""
    return json.dumps(value, sort_keys=True, ensure_ascii=False, allow_nan=False)


def write_json(path: PathLike, value: JsValue) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(json.dumps(value, sort_keys=True, ensure_ascii=False, allow_nan=False, indent=2))
        f.write("\n")


class JsonLinesError(ValueError):
    def __init__(self, line: int, reason: str) -> None:
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


def read_jsonl(path: PathLike) -> Iterator[Tuple[int, JsObject]]:
    """
    Yield (line number, object) for every non-blank line. Line numbers start at 1.
    """
    with open(path, "r", encoding="utf-8") as f:
        for number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                value = json.loads(line)
            except json.JSONDecodeError as e:
                raise JsonLinesError(number, e.msg) from e
            if not isinstance(value, dict):
                raise JsonLinesError(number, "expected a JSON object")
            yield number, value  # type: ignore


def write_jsonl(path: PathLike, rows: Iterable[JsValue]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for row in rows:
            f.write(dumps_stable(row))
            f.write("\n")
