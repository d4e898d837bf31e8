import logging
import re
from dataclasses import dataclass
from typing import Dict, List, Optional

from glpn.models import GlpnError, LlmVerdict, NewsRecord, PromptStyle, PromptTemplate

log = logging.getLogger(__name__)

ChatMessage = Dict[str, str]


class EmptyTextError(GlpnError):
    def __init__(self, record_id: str) -> None:
        super().__init__(f"record {record_id!r} has no text to label")
        self.record_id = record_id


class VerdictParseError(GlpnError):
    """A response could not be turned into a verdict."""


class MissingResultError(VerdictParseError):
    pass


class MissingConfidenceError(VerdictParseError):
    pass


class InvalidResultError(VerdictParseError):
    pass


class ConfidenceRangeError(VerdictParseError):
    pass


DETAILED = PromptTemplate(
    style=PromptStyle.Detailed,
    system_text=(
        "You are a professional misinformation evaluation expert with extensive experience in detecting and "
        "evaluating fake news. Your primary task is to assess the authenticity of the provided news content. "
        "You must adhere to the following strict evaluation guidelines:\n"
        "- If the news is clearly true, label it as 1 (true).\n"
        "- If the news contains ambiguity, unverifiable information, or suspicious claims, you must classify it "
        "as 0 (false).\n"
        "- Alongside your classification, provide a confidence score (between 0% and 100%) that reflects your "
        "certainty in the decision.\n"
        "- Your confidence score should be lower (e.g., 50%-70%) when the news includes unclear or mixed "
        "signals, and higher (e.g., 80%-100%) when you are certain.\n"
        "Output format: Result: R, Confidence: C%, where R is 1 (true) or 0 (false), and C is the confidence "
        "score.\n"
        "Be precise, concise, avoid unnecessary explanations, and give me the reason."
    ),
    few_shot_turns=(
        (
            "user",
            "BREAKING: SkyBusiness reports another five hostages seen escaping #sydneysiege.\n"
            "Additional context: The event is unfolding in Sydney's central business district. Initial "
            "unverified reports mention hostages being rescued, but official statements have not yet been "
            "released.",
        ),
        (
            "system",
            "Result: 1, Confidence: 85%\n"
            "Reason: Based on credible news reports and consistent information across major media outlets, the "
            "claim of hostages escaping appears highly plausible. Minor uncertainty remains due to the absence "
            "of official verification.",
        ),
        ("user", "CONFIRMED: NASA discovers alien life on Mars."),
        (
            "system",
            "Result: 0, Confidence: 30%\n"
            "Reason: This claim lacks supporting evidence from verified scientific sources, and NASA has not "
            "released any official confirmation regarding such a discovery. The headline seems sensationalized "
            "or misleading.",
        ),
        ("user", "ALERT: Severe storms expected to hit California tomorrow, warns National Weather Service."),
        (
            "system",
            "Result: 1, Confidence: 95%\n"
            "Reason: The information originates from the National Weather Service, a highly reliable and "
            "authoritative source. Severe weather forecasts for tomorrow are consistent across official "
            "meteorological channels.",
        ),
    ),
)

SIMPLE = PromptTemplate(
    style=PromptStyle.Simple,
    system_text=(
        "You are tasked with determining whether the provided news content is true or false.\n"
        "Output format: Result: R, Confidence :c, where R is 1 (true) or 0 (false)."
    ),
    few_shot_turns=(
        ("user", "BREAKING: SkyBusiness reports another five hostages seen escaping #sydneysiege."),
        ("system", "Result: 1, Confidence: 49%"),
        ("user", "CONFIRMED: NASA discovers alien life on Mars."),
        ("system", "Result: 0, Confidence: 20%"),
        ("user", "ALERT: Severe storms expected to hit California tomorrow."),
        ("system", "Result: 1, Confidence: 63%"),
    ),
)


def template_for(style: PromptStyle) -> PromptTemplate:
    return DETAILED if style == PromptStyle.Detailed else SIMPLE


_whitespace = re.compile(r"\s+")
_control = re.compile(r"[\x00-\x1f\x7f-\x9f]")


def clean_text(text: str) -> str:
    """Collapse whitespace runs into single spaces and drop the remaining control characters."""
    collapsed = _control.sub("", _whitespace.sub(" ", text))
    return _whitespace.sub(" ", collapsed).strip()


@dataclass(frozen=True)
class ChatRequest:
    record_id: str
    messages: List[ChatMessage]


def render_prompt(tpl: PromptTemplate, record: NewsRecord) -> ChatRequest:
    """
    Render the chat messages for one record: the system instruction, the few-shot exchanges and
    the cleaned record text as the final user message.
    """
    cleaned = clean_text(record.text) if record.text is not None else ""
    if not cleaned:
        raise EmptyTextError(record.id)
    messages: List[ChatMessage] = [{"role": "system", "content": tpl.system_text}]
    messages.extend({"role": role, "content": content} for role, content in tpl.few_shot_turns)
    messages.append({"role": "user", "content": cleaned})
    return ChatRequest(record_id=record.id, messages=messages)


_result = re.compile(r"result\s*:\s*([+-]?\d+)", re.IGNORECASE)
_confidence = re.compile(r"confidence\s*:\s*([+-]?\d+(?:\.\d+)?|[+-]?\.\d+)\s*%?", re.IGNORECASE)
_reason = re.compile(r"reason\s*:\s*(.*)", re.IGNORECASE | re.DOTALL)


def parse_verdict(response_text: str) -> LlmVerdict:
    """
    Parse a response of the form `Result: R, Confidence: C%` with an optional trailing `Reason: ...`.

    Matching is case-insensitive and picks the first occurrence of each token, so surrounding prose is
    tolerated. The confidence is read as a percentage and scaled to [0, 1].
    """
    result = _result.search(response_text)
    if result is None:
        raise MissingResultError(f"no 'Result:' token in response {response_text[:80]!r}")
    digits = result.group(1)
    # compare the text so arbitrarily long digit runs never reach int()
    if digits.lstrip("+") not in ("0", "1"):
        raise InvalidResultError(f"result must be 0 or 1, got {digits[:20]}")
    pred = int(digits.lstrip("+"))

    confidence = _confidence.search(response_text)
    if confidence is None:
        raise MissingConfidenceError(f"no 'Confidence:' token in response {response_text[:80]!r}")
    percent = float(confidence.group(1))
    if not 0.0 <= percent <= 100.0:
        raise ConfidenceRangeError(f"confidence must be within [0, 100], got {confidence.group(1)[:20]}")

    reason: Optional[str] = None
    found = _reason.search(response_text)
    if found is not None:
        reason = found.group(1).strip() or None
    return LlmVerdict(pred=pred, confidence=percent / 100.0, reason=reason, raw=response_text)
