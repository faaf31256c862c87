"""Answer verification: normalization and equivalence.

Predicted answers arrive as LaTeX fragments, option letters, bare
numbers, or free text; gold answers arrive in whatever shape the source
dataset used. Both sides are pushed through the same normalization and
then compared by kind. Numeric comparison is tolerant of formatting
(commas, fractions, simple constant multiples); everything else falls
back to exact canonical-string comparison, so an unrecognized expression
can only ever under-count, never over-count, correctness.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

_CONSTANTS = {
    "\\pi": math.pi,
    "π": math.pi,
    "pi": math.pi,
    "e": math.e,
}

_FRAC = re.compile(r"^\\[dt]?frac\{(?P<num>[^{}]*)\}\{(?P<den>[^{}]*)\}$")
_PLAIN_NUMBER = re.compile(r"^[-+]?(\d+\.?\d*|\.\d+)([eE][-+]?\d+)?$")
_PERCENT = re.compile(r"^([-+]?(\d+\.?\d*|\.\d+))\s*(%|\\%)$")
# "D. September", "B) 42" style: a labeled multiple-choice option
_LABELED_OPTION = re.compile(r"^([A-E])\s*[.):]\s+\S.*$")
_TEXT_CMD = re.compile(r"\\text(?:bf|it|rm)?\{([^{}]*)\}")


@dataclass(frozen=True)
class NormalizedAnswer:
    """Canonical form of an answer plus its numeric value when one exists."""

    canonical: str
    kind: str
    numeric_value: float | None = None


def _strip_math_wrappers(s: str) -> str:
    s = s.strip()
    for left, right in (("$$", "$$"), ("$", "$"), ("\\(", "\\)"), ("\\[", "\\]")):
        if s.startswith(left) and s.endswith(right) and len(s) > len(left) + len(right) - 1:
            s = s[len(left):len(s) - len(right)].strip()
    return s


def _numeric_value(s: str) -> float | None:
    """Evaluate the small closed class of numeric forms we accept."""
    s = s.strip()
    if not s:
        return None
    plain = s.replace(",", "").rstrip(".")
    if _PLAIN_NUMBER.fullmatch(plain):
        return float(plain)
    m = _PERCENT.fullmatch(plain)
    if m:
        return float(m.group(1)) / 100.0
    if s in _CONSTANTS:
        return _CONSTANTS[s]
    m = _FRAC.fullmatch(s)
    if m:
        num = _numeric_value(m.group("num"))
        den = _numeric_value(m.group("den"))
        if num is not None and den not in (None, 0.0):
            return num / den
    # coefficient times a constant: 7\pi, 2π, 3.5e, -\pi
    for name, value in _CONSTANTS.items():
        if s.endswith(name):
            coef = s[:len(s) - len(name)].strip().rstrip("*").rstrip("\\cdot").strip()
            if coef in ("", "+"):
                return value
            if coef == "-":
                return -value
            cv = _numeric_value(coef)
            if cv is not None:
                return cv * value
    return None


def normalize(answer: str, kind_hint: str | None = None) -> NormalizedAnswer:
    """Reduce an answer string to a canonical, comparable form.

    Deterministic and idempotent: normalize(normalize(x).canonical) gives
    the same canonical string back.
    """
    s = _strip_math_wrappers(str(answer))
    s = _TEXT_CMD.sub(r"\1", s)
    s = s.strip()
    if s.endswith(".") and not _PLAIN_NUMBER.fullmatch(s.replace(",", "")):
        s = s[:-1].strip()

    m = _LABELED_OPTION.fullmatch(s)
    if m:
        return NormalizedAnswer(canonical=m.group(1), kind="option_letter")
    if re.fullmatch(r"\(?([A-E])\)?", s) and (kind_hint in (None, "option_letter")):
        letter = re.sub(r"[()]", "", s)
        return NormalizedAnswer(canonical=letter, kind="option_letter")

    value = _numeric_value(s)
    if value is not None and _PLAIN_NUMBER.fullmatch(s.replace(",", "").rstrip(".")):
        canonical = repr(value) if not value.is_integer() else str(int(value))
        return NormalizedAnswer(canonical=canonical, kind="numeric", numeric_value=value)
    if value is not None:
        # symbolic but numerically evaluable (fractions, constant multiples)
        return NormalizedAnswer(canonical=" ".join(s.split()), kind="expression",
                                numeric_value=value)

    collapsed = " ".join(s.split())
    if any(c in collapsed for c in "\\^_=") or re.search(r"\d", collapsed):
        if kind_hint != "free_text":
            return NormalizedAnswer(canonical=collapsed, kind="expression")
    return NormalizedAnswer(canonical=collapsed, kind="free_text")


def equivalent(predicted: str, gold: str,
               gold_kind: str | None = None) -> bool:
    """Decide whether a predicted answer matches the gold answer.

    Option letters compare by letter (so "C" matches gold "C. September").
    Anything with a numeric value on both sides compares numerically with
    a relative tolerance of 1e-6. Otherwise the canonical strings must
    match exactly, case-insensitively only when both sides are free text.
    """
    p = normalize(predicted)
    g = normalize(gold, kind_hint=gold_kind)

    if g.kind == "option_letter" or p.kind == "option_letter":
        return p.canonical == g.canonical

    if p.numeric_value is not None and g.numeric_value is not None:
        return math.isclose(p.numeric_value, g.numeric_value,
                            rel_tol=1e-6, abs_tol=1e-9)

    if p.kind == "free_text" and g.kind == "free_text":
        return p.canonical.casefold() == g.canonical.casefold()
    return p.canonical == g.canonical
