"""Prompt rendering and strict response parsing.

The training prompt instructs the model to answer in three XML-ish sections:
``<think>`` free-form reasoning, ``<name>`` a comma-separated list of
attribute claims ("attribute: promotes" / "attribute: inhibits"), and
``<answer>`` the final prediction. Scoring rides on those tags, so parsing
must be total -- any byte string maps to a ParsedResponse, never an
exception -- and strict about what counts as well-formed.

Strictness rules (``format_ok``):
  * each tag pair appears exactly once, well nested, ordered
    think -> name -> answer;
  * the claims list parses completely (bare attribute names without a
    polarity are tolerated, matching how weaker models actually answer;
    they still count as claims but carry no polarity);
  * the answer parses for the task: true/false for classification, a
    decimal number for regression.

Field extraction is independent of ``format_ok``: a response with a valid
answer inside the tags but a missing think section still exposes its
answer (and is format-penalized), which is exactly how the reward stack
treats such outputs.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

__all__ = [
    "PromptSpec",
    "AttributeClaim",
    "ParsedResponse",
    "render_prompt",
    "render_response",
    "parse_response",
    "parse_claims",
    "claims_vector",
    "PROMPT_TEMPLATE",
]

CLASSIFICATION = "classification"
REGRESSION = "regression"

# The fine-tuning prompt, verbatim. {task} is the literal word
# "classification" or "regression".
PROMPT_TEMPLATE = (
    "System: Your task is to predict the property of the given molecule. "
    "You must write your response using the following strict XML format: "
    "<think> Step-by-step reasoning with consideration on relevant attributes "
    "can be calculated using RDKit. For each attribute, provide its estimated "
    "value, and explain whether it promotes (improve) or inhibits (not improve) "
    "the target property. </think>, "
    "<name> List the attributes you used, each followed by \": promotes\" or "
    "\": inhibits\", separated by commas. For example: attribute A: promotes, "
    "attribute B: promotes, attribute C: inhibits. </name>, "
    "<answer> The final answer (e.g., true/false or specific values) based on "
    "your overall reasoning. </answer>. "
    "User: The task is {task}, the molecule is {smiles}, and the property to "
    "be considered is {target}. "
    "Assistant:"
)


@dataclass(frozen=True)
class PromptSpec:
    task: str            # "classification" | "regression"
    smiles: str
    target: str          # e.g. "BBBP"

    def __post_init__(self):
        if self.task not in (CLASSIFICATION, REGRESSION):
            raise ValueError(f"unknown task {self.task!r}")


@dataclass(frozen=True)
class AttributeClaim:
    raw_name: str
    polarity: str | None  # "promotes" | "inhibits" | None (bare name)


@dataclass(frozen=True)
class ParsedResponse:
    think: str | None
    claims: tuple[AttributeClaim, ...] | None
    answer: bool | float | None
    format_ok: bool
    token_count: int


def render_prompt(spec: PromptSpec) -> str:
    return PROMPT_TEMPLATE.format(task=spec.task, smiles=spec.smiles,
                                  target=spec.target)


# ---------------------------------------------------------------------------
# Claims
# ---------------------------------------------------------------------------

_PROMOTES = {"promotes", "promote", "improves", "improve"}
_INHIBITS = {"inhibits", "inhibit", "not improve", "does not improve",
             "notimprove"}


def parse_claims(content: str) -> tuple[tuple[AttributeClaim, ...] | None, bool]:
    """Parse the name-tag payload. Returns (claims, ok).

    ``ok`` is False when any comma-separated piece fails the grammar
    ``name [":" polarity]``; the claims are then unusable and reported as
    ``None``. An empty payload is a valid empty claim list.
    """
    if not content.strip():
        return (), True
    claims: list[AttributeClaim] = []
    for piece in content.split(","):
        piece = piece.strip()
        if not piece:
            return None, False
        name, sep, polarity_text = piece.partition(":")
        name = name.strip()
        if not name:
            return None, False
        if not sep:
            claims.append(AttributeClaim(name, None))
            continue
        polarity_key = " ".join(polarity_text.lower().split())
        if polarity_key in _PROMOTES:
            claims.append(AttributeClaim(name, "promotes"))
        elif polarity_key in _INHIBITS:
            claims.append(AttributeClaim(name, "inhibits"))
        else:
            return None, False
    return tuple(claims), True


def claims_vector(claims) -> list[int]:
    """Polarities as bits (promotes=1, inhibits=0), skipping bare names."""
    return [1 if c.polarity == "promotes" else 0
            for c in claims if c.polarity is not None]


# ---------------------------------------------------------------------------
# Response parsing
# ---------------------------------------------------------------------------

_NUMBER_RE = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")


def _extract(text: str, tag: str) -> tuple[str | None, int, int, int]:
    """First-pair payload plus bookkeeping: (content, open count, close
    count, open position). Content is None when either tag is missing."""
    open_tag, close_tag = f"<{tag}>", f"</{tag}>"
    n_open = text.count(open_tag)
    n_close = text.count(close_tag)
    start = text.find(open_tag)
    if start < 0:
        return None, n_open, n_close, -1
    end = text.find(close_tag, start + len(open_tag))
    if end < 0:
        return None, n_open, n_close, start
    return text[start + len(open_tag):end], n_open, n_close, start


def _parse_answer(content: str | None, task: str):
    if content is None:
        return None
    token = content.strip().rstrip(".").strip().lower()
    if task == CLASSIFICATION:
        if token == "true":
            return True
        if token == "false":
            return False
        return None
    if _NUMBER_RE.match(token):
        try:
            return float(token)
        except ValueError:  # pragma: no cover - regex prevents this
            return None
    return None


def parse_response(text: str, task: str = CLASSIFICATION) -> ParsedResponse:
    """Total function from raw text to a ParsedResponse.

    Never raises on string input; adversarial bytes simply produce
    ``format_ok=False`` with whatever fields were extractable.
    """
    if not isinstance(text, str):
        text = str(text)
    token_count = len(text.split())

    think, t_open, t_close, t_pos = _extract(text, "think")
    name_raw, n_open, n_close, n_pos = _extract(text, "name")
    answer_raw, a_open, a_close, a_pos = _extract(text, "answer")

    claims: tuple[AttributeClaim, ...] | None = None
    claims_ok = False
    if name_raw is not None:
        claims, claims_ok = parse_claims(name_raw)

    answer = _parse_answer(answer_raw, task)

    format_ok = (
        t_open == 1 and t_close == 1 and think is not None
        and n_open == 1 and n_close == 1 and name_raw is not None
        and a_open == 1 and a_close == 1 and answer_raw is not None
        and claims_ok
        and answer is not None
        # strict section order: think closes before name opens, name closes
        # before answer opens
        and text.find("</think>") < n_pos
        and text.find("</name>") < a_pos
        and t_pos < text.find("</think>")
        and n_pos < text.find("</name>")
        and a_pos < text.find("</answer>")
    )

    return ParsedResponse(
        think=think,
        claims=claims,
        answer=answer,
        format_ok=bool(format_ok),
        token_count=token_count,
    )


def render_response(think: str, claims, answer, omit: str | None = None) -> str:
    """Assemble a response in the canonical shape the parser expects.

    ``claims`` is an iterable of AttributeClaim (or (name, polarity) pairs);
    ``answer`` is a bool for classification or a number for regression.
    ``omit`` drops one tag pair entirely ("think" | "name" | "answer"),
    which is the canonical way to make a malformed-but-realistic response.
    """
    parts = []
    if omit != "think":
        parts.append(f"<think> {think} </think>")
    if omit != "name":
        rendered = []
        for claim in claims:
            if isinstance(claim, AttributeClaim):
                name, polarity = claim.raw_name, claim.polarity
            else:
                name, polarity = claim
            rendered.append(name if polarity is None else f"{name}: {polarity}")
        parts.append(f"<name> {', '.join(rendered)} </name>")
    if omit != "answer":
        if isinstance(answer, bool):
            text = "True" if answer else "False"
        else:
            text = f"{answer}"
        parts.append(f"<answer> {text} </answer>")
    return "\n".join(parts)
