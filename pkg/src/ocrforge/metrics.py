"""Character error rate, word accuracy, and the normalization profiles
behind every string comparison in the toolkit.

All metrics operate on Unicode scalar values after a named normalization
profile has been applied, so Korean text is always compared at the composed
syllable level and English STR-style scoring can fold case and strip
punctuation without each caller reinventing the policy.
"""

from __future__ import annotations

import math
import unicodedata
from dataclasses import dataclass
from typing import Iterable, Sequence


class EmptyReferenceError(ValueError):
    """Reference text normalized to the empty string (bad label, not a score)."""

    def __init__(self, index: int | None = None):
        self.index = index
        at = "" if index is None else f" at pair index {index}"
        super().__init__(f"reference normalizes to empty string{at}")


class EmptyInputError(ValueError):
    """An aggregate metric was asked to average zero pairs."""


_UNICODE_FORMS = {"composed": "NFC", "decomposed": "NFD"}
_CASINGS = ("preserve", "fold")
_CHARSET_FILTERS = ("none", "latin-alphanumeric")
_WHITESPACE_POLICIES = ("preserve", "collapse", "strip-all")


@dataclass(frozen=True)
class NormProfile:
    """A named text-normalization policy.

    Steps apply in a fixed order: unicode form, casing, charset filter,
    whitespace policy. Applying a profile twice equals applying it once.
    """

    name: str
    unicode_form: str = "composed"
    casing: str = "preserve"
    charset_filter: str = "none"
    whitespace: str = "preserve"

    def __post_init__(self):
        if self.unicode_form not in _UNICODE_FORMS:
            raise ValueError(f"unknown unicode_form {self.unicode_form!r}")
        if self.casing not in _CASINGS:
            raise ValueError(f"unknown casing {self.casing!r}")
        if self.charset_filter not in _CHARSET_FILTERS:
            raise ValueError(f"unknown charset_filter {self.charset_filter!r}")
        if self.whitespace not in _WHITESPACE_POLICIES:
            raise ValueError(f"unknown whitespace policy {self.whitespace!r}")


EXACT_NFC = NormProfile("exact-nfc")
STR_BENCHMARK = NormProfile(
    "str-benchmark",
    unicode_form="composed",
    casing="fold",
    charset_filter="latin-alphanumeric",
    whitespace="strip-all",
)

PROFILES = {p.name: p for p in (EXACT_NFC, STR_BENCHMARK)}


def get_profile(name: str) -> NormProfile:
    try:
        return PROFILES[name]
    except KeyError:
        raise ValueError(
            f"unknown profile {name!r}; available: {sorted(PROFILES)}"
        ) from None


def default_profile_for_language(lang: str) -> NormProfile:
    """exact-nfc for Korean/mixed text, str-benchmark for English STR data."""
    return STR_BENCHMARK if lang == "en" else EXACT_NFC


def normalize(text: str, profile: NormProfile = EXACT_NFC) -> str:
    """Apply a normalization profile to text.

    The text is kept in the profile's Unicode form after every step that
    rewrites characters; case folding and whitespace removal can otherwise
    create newly-composable sequences and break idempotence.
    """
    form = _UNICODE_FORMS[profile.unicode_form]
    out = unicodedata.normalize(form, text)
    if profile.casing == "fold":
        out = unicodedata.normalize(form, out.casefold())
    if profile.charset_filter == "latin-alphanumeric":
        out = "".join(c for c in out if c.isascii() and c.isalnum())
    if profile.whitespace == "collapse":
        out = unicodedata.normalize(form, " ".join(out.split()))
    elif profile.whitespace == "strip-all":
        out = unicodedata.normalize(form, "".join(c for c in out if not c.isspace()))
    return out


def edit_distance(a: str, b: str) -> int:
    """Minimal unit-cost edit count (insert/delete/substitute) between two
    strings of Unicode scalar values.

    O(len(a) * len(b)) time, O(min(len(a), len(b))) working space.
    """
    if a == b:
        return 0
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(cur[j - 1] + 1, prev[j] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


@dataclass(frozen=True)
class CerResult:
    """Edit distance, normalized reference length, and their ratio.

    cer may exceed 1.0 when the prediction is much longer than the
    reference; callers must not clamp it.
    """

    distance: int
    ref_len: int
    cer: float


def cer(pred: str, ref: str, profile: NormProfile = EXACT_NFC) -> CerResult:
    """Character error rate of one prediction against one reference."""
    npred = normalize(pred, profile)
    nref = normalize(ref, profile)
    if not nref:
        raise EmptyReferenceError()
    d = edit_distance(npred, nref)
    return CerResult(distance=d, ref_len=len(nref), cer=d / len(nref))


def corpus_cer(
    pairs: Iterable[tuple[str, str]],
    profile: NormProfile = EXACT_NFC,
    average: str = "micro",
) -> float:
    """Aggregate CER over (prediction, reference) pairs.

    micro (default): sum of distances over sum of reference lengths.
    macro: unweighted mean of per-pair CERs.
    """
    if average not in ("micro", "macro"):
        raise ValueError(f"unknown average {average!r}")
    results = []
    for i, (pred, ref) in enumerate(pairs):
        try:
            results.append(cer(pred, ref, profile))
        except EmptyReferenceError:
            raise EmptyReferenceError(index=i) from None
    if not results:
        raise EmptyInputError("corpus_cer over zero pairs")
    if average == "macro":
        return math.fsum(r.cer for r in results) / len(results)
    return sum(r.distance for r in results) / sum(r.ref_len for r in results)


def word_accuracy(
    pairs: Sequence[tuple[str, str]], profile: NormProfile = EXACT_NFC
) -> float:
    """Fraction of pairs whose normalized prediction equals the normalized
    reference exactly."""
    if not pairs:
        raise EmptyInputError("word_accuracy over zero pairs")
    hits = sum(
        1 for pred, ref in pairs if normalize(pred, profile) == normalize(ref, profile)
    )
    return hits / len(pairs)
