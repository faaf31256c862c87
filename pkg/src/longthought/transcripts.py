"""Long-thought transcript grammar.

A transcript is a reasoning block followed by a solution block, each
wrapped in special delimiter tokens:

    <|begin_of_thought|> ... <|end_of_thought|>

    <|begin_of_solution|> ... <|end_of_solution|>

This module parses and renders that format, pulls final answers out of
solution blocks, and measures thought length. Everything here is a pure
function over immutable inputs; no shared state, safe under any number
of concurrent workers.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .errors import (
    DelimiterInPayload,
    MalformedTranscript,
    NoAnswerFound,
    SchemaViolation,
)

BEGIN_THOUGHT = "<|begin_of_thought|>"
END_THOUGHT = "<|end_of_thought|>"
BEGIN_SOLUTION = "<|begin_of_solution|>"
END_SOLUTION = "<|end_of_solution|>"

DELIMITERS = (BEGIN_THOUGHT, END_THOUGHT, BEGIN_SOLUTION, END_SOLUTION)

MODALITIES = frozenset({"textual", "visual"})
DOMAINS = frozenset({
    "math", "science", "code", "puzzle",
    "geometry", "table_chart_figure", "object", "other",
})
SOURCES = frozenset({"R1", "QwQ", "QVQ", "SelfDistilled"})

ANSWER_KINDS = frozenset({"numeric", "option_letter", "expression", "free_text"})

# Instruction appended to prompts so generators emit parseable transcripts.
FORMAT_INSTRUCTION = (
    "Think through the problem step by step between <|begin_of_thought|> and "
    "<|end_of_thought|>, then give a clean final write-up between "
    "<|begin_of_solution|> and <|end_of_solution|> ending with the final "
    "answer in \\boxed{}."
)

# Token that is a bare option letter once surrounding punctuation is gone,
# e.g. "C", "C.", "(D)", "**B**".
_OPTION_TOKEN = re.compile(r"^\W*([A-E])\W*$")
_PLAIN_NUMBER = re.compile(r"^[-+]?(\d+\.?\d*|\.\d+)([eE][-+]?\d+)?$")


@dataclass(frozen=True)
class ThoughtDelimiters:
    """The four delimiter literals, fixed for the lifetime of a corpus."""

    begin_thought: str = BEGIN_THOUGHT
    end_thought: str = END_THOUGHT
    begin_solution: str = BEGIN_SOLUTION
    end_solution: str = END_SOLUTION

    def as_tuple(self) -> tuple[str, str, str, str]:
        return (self.begin_thought, self.end_thought,
                self.begin_solution, self.end_solution)


@dataclass(frozen=True)
class FinalAnswer:
    """The parsed terminal answer of a solution block."""

    raw: str
    kind: str

    def __post_init__(self):
        if not self.raw:
            raise ValueError("final answer must be non-empty")
        if self.kind not in ANSWER_KINDS:
            raise ValueError(f"unknown answer kind: {self.kind!r}")


def parse_transcript(raw: str, delimiters: ThoughtDelimiters | None = None) -> tuple[str, str]:
    """Split a transcript into its (thought, solution) payloads.

    Each delimiter must occur exactly once and in order. The payloads are
    the exact byte spans between their delimiters; content outside the two
    blocks (canonically just whitespace) is ignored. Anything else raises
    MalformedTranscript; malformed transcripts are discarded upstream,
    never repaired, so retention statistics stay honest.
    """
    delims = (delimiters or ThoughtDelimiters()).as_tuple()
    positions = []
    for lit in delims:
        count = raw.count(lit)
        if count == 0:
            raise MalformedTranscript(f"missing delimiter {lit!r}")
        if count > 1:
            raise MalformedTranscript(f"duplicated delimiter {lit!r}")
        positions.append(raw.index(lit))
    if not (positions[0] < positions[1] < positions[2] < positions[3]):
        raise MalformedTranscript("delimiters out of order")
    thought = raw[positions[0] + len(delims[0]):positions[1]]
    solution = raw[positions[2] + len(delims[2]):positions[3]]
    return thought, solution


def render_transcript(thought: str, solution: str,
                      delimiters: ThoughtDelimiters | None = None) -> str:
    """Wrap payloads in delimiters, blocks separated by a blank line.

    Inverse of parse_transcript: the roundtrip is byte-exact for any
    delimiter-free payloads.
    """
    d = delimiters or ThoughtDelimiters()
    for name, payload in (("thought", thought), ("solution", solution)):
        for lit in d.as_tuple():
            if lit in payload:
                raise DelimiterInPayload(f"{name} payload contains {lit!r}")
    return (f"{d.begin_thought}{thought}{d.end_thought}"
            f"\n\n{d.begin_solution}{solution}{d.end_solution}")


def _boxed_spans(text: str) -> list[str]:
    """All brace-balanced ``\\boxed{...}`` contents, in scan order."""
    spans = []
    start = 0
    marker = "\\boxed{"
    while True:
        idx = text.find(marker, start)
        if idx < 0:
            break
        depth = 1
        pos = idx + len(marker)
        while pos < len(text) and depth > 0:
            ch = text[pos]
            if ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
            pos += 1
        if depth == 0:
            spans.append(text[idx + len(marker):pos - 1])
        start = idx + len(marker)
    return spans


def _classify(content: str) -> str:
    if re.fullmatch(r"[A-E]", content.strip()):
        return "option_letter"
    if _PLAIN_NUMBER.fullmatch(content.strip().replace(",", "")):
        return "numeric"
    return "expression"


def extract_final_answer(solution: str) -> FinalAnswer:
    """Pull the terminal answer out of a parsed solution block.

    Precedence: last balanced ``\\boxed{...}`` wins; failing that, the
    last token that is a standalone option letter A-E; failing that, the
    last non-empty line as free text. The precedence is fixed so that
    retention decisions are reproducible.
    """
    if not solution or not solution.strip():
        raise NoAnswerFound("solution block is empty")

    spans = [s for s in _boxed_spans(solution) if s.strip()]
    if spans:
        content = spans[-1].strip()
        return FinalAnswer(raw=content, kind=_classify(content))

    letters = [m.group(1) for tok in solution.split()
               if (m := _OPTION_TOKEN.match(tok))]
    if letters:
        return FinalAnswer(raw=letters[-1], kind="option_letter")

    last_line = [ln for ln in solution.splitlines() if ln.strip()][-1].strip()
    if last_line.count("{") != last_line.count("}"):
        # free text with stray braces would break the balance guarantee
        last_line = last_line.replace("{", "").replace("}", "")
    return FinalAnswer(raw=last_line, kind="free_text")


@dataclass(frozen=True)
class LenientParse:
    """Best-effort read of a model response that may ignore the grammar."""

    thought: str
    solution: str
    format_ok: bool


def parse_leniently(text: str) -> LenientParse:
    """Parse strictly when possible, else treat the whole text as solution.

    Generated responses do not always honor the grammar; scoring still
    wants whatever answer is in there, with the format violation flagged
    rather than hidden.
    """
    try:
        thought, solution = parse_transcript(text)
        return LenientParse(thought=thought, solution=solution, format_ok=True)
    except MalformedTranscript:
        return LenientParse(thought="", solution=text, format_ok=False)


def _whitespace_tokens(thought: str) -> int:
    return len(thought.split())


# The length measure is a named strategy so a model tokenizer can be
# substituted without touching stored corpora; lengths are recomputed when
# the measure changes.
LENGTH_MEASURES = {
    "whitespace": _whitespace_tokens,
}

DEFAULT_LENGTH_MEASURE = "whitespace"


def measure_thought_length(thought: str, measure: str = DEFAULT_LENGTH_MEASURE) -> int:
    """Deterministic thought length under a named measure."""
    try:
        fn = LENGTH_MEASURES[measure]
    except KeyError:
        raise ValueError(f"unknown length measure: {measure!r}") from None
    return fn(thought)


@dataclass(frozen=True)
class LongThoughtRecord:
    """One instruction instance: a query with its thought and solution.

    ``thought_length`` is always consistent with the configured measure;
    pass None (the default) to have it computed at construction.
    """

    id: str
    modality: str
    domain: str
    query: str
    thought: str
    solution: str
    source: str
    image_ref: str | None = None
    thought_length: int | None = field(default=None)
    length_measure: str = DEFAULT_LENGTH_MEASURE

    def __post_init__(self):
        if not self.id:
            raise SchemaViolation("record id must be non-empty")
        if self.modality not in MODALITIES:
            raise SchemaViolation(f"unknown modality {self.modality!r}", field="modality")
        if self.domain not in DOMAINS:
            raise SchemaViolation(f"unknown domain {self.domain!r}", field="domain")
        if self.source not in SOURCES:
            raise SchemaViolation(f"unknown source {self.source!r}", field="source")
        if (self.modality == "visual") != (self.image_ref is not None):
            raise SchemaViolation(
                "image_ref is required for visual records and forbidden otherwise",
                field="image_ref")
        for name, payload in (("thought", self.thought), ("solution", self.solution)):
            for lit in DELIMITERS:
                if lit in payload:
                    raise DelimiterInPayload(f"{name} contains delimiter {lit!r}")
        expected = measure_thought_length(self.thought, self.length_measure)
        if self.thought_length is None:
            object.__setattr__(self, "thought_length", expected)
        elif self.thought_length != expected:
            raise SchemaViolation(
                f"thought_length {self.thought_length} != measured {expected}",
                field="thought_length")

    def transcript(self) -> str:
        return render_transcript(self.thought, self.solution)
