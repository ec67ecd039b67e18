"""Multilingual valence lexicons: entries, score normalization, classes, TSV I/O."""

from __future__ import annotations

import enum
import hashlib
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping

VALENCE_MIN = -5.0
VALENCE_MAX = 5.0

_LANG_RE = re.compile(r"^[a-z]{2,3}(?:[-_][A-Za-z0-9]{2,8})?$")

BINARY = "binary"
THREE_WAY = "three_way"
MODES = (BINARY, THREE_WAY)

NEGATIVE = "negative"
NEUTRAL = "neutral"
POSITIVE = "positive"

# canonical label orders, also used as tie-break order elsewhere
LABELS = {
    BINARY: (NEGATIVE, POSITIVE),
    THREE_WAY: (NEGATIVE, NEUTRAL, POSITIVE),
}

MERGE_POLICIES = ("mean", "keep_first", "error")


class LexiconError(ValueError):
    pass


class Source(str, enum.Enum):
    ORIGINAL = "original"
    TRANSLATED = "translated"
    PROJECTED = "projected"
    ACCEPTED = "accepted-by-filter"


def _check_score(value, name: str) -> float:
    value = float(value)
    if not math.isfinite(value) or not VALENCE_MIN <= value <= VALENCE_MAX:
        raise LexiconError(f"{name} {value!r} outside [{VALENCE_MIN}, {VALENCE_MAX}]")
    return value


@dataclass(frozen=True)
class LexiconEntry:
    word: str
    lang: str
    valence: float
    arousal: float | None = None
    dominance: float | None = None
    source: Source = Source.ORIGINAL

    def __post_init__(self):
        word = self.word.strip() if isinstance(self.word, str) else self.word
        if not isinstance(word, str) or not word:
            raise LexiconError(f"empty word in entry {self!r}")
        if any(c in word for c in "\t\n\r"):
            raise LexiconError(f"word {word!r} contains a tab or newline")
        if not isinstance(self.lang, str) or not _LANG_RE.match(self.lang):
            raise LexiconError(f"invalid language code {self.lang!r}")
        object.__setattr__(self, "word", word)
        object.__setattr__(self, "valence", _check_score(self.valence, "valence"))
        for name in ("arousal", "dominance"):
            val = getattr(self, name)
            if val is not None:
                object.__setattr__(self, name, _check_score(val, name))
        object.__setattr__(self, "source", Source(self.source))

    @property
    def key(self) -> tuple[str, str]:
        return (self.word, self.lang)


def normalize_raw(raw: float) -> float:
    """Map a raw [0, 1] score onto the [-5, 5] valence scale."""
    raw = float(raw)
    if not (0.0 <= raw <= 1.0):
        raise LexiconError(f"raw score {raw!r} outside [0, 1]")
    return 10.0 * raw - 5.0


def class_of(valence: float, mode: str = THREE_WAY) -> str:
    """Sentiment class of a valence score.

    Three-way: negative below -1, neutral on [-1, 1), positive from 1 up.
    Binary: negative below 0, positive otherwise (a tie at 0 goes positive).
    """
    valence = _check_score(valence, "valence")
    if mode == THREE_WAY:
        if valence < -1.0:
            return NEGATIVE
        if valence < 1.0:
            return NEUTRAL
        return POSITIVE
    if mode == BINARY:
        return NEGATIVE if valence < 0.0 else POSITIVE
    raise LexiconError(f"unknown mode {mode!r}; expected one of {MODES}")


def _canonical_key(key: tuple[str, str]) -> tuple[str, str]:
    word, lang = key
    return (lang, word)


def _mean(values):
    values = [v for v in values if v is not None]
    if not values:
        return None
    return math.fsum(values) / len(values)


def _combine(entries: list[LexiconEntry], policy: str) -> LexiconEntry:
    if policy == "keep_first" or len(entries) == 1:
        return entries[0]
    if policy == "mean":
        return replace(
            entries[0],
            valence=_mean(e.valence for e in entries),
            arousal=_mean(e.arousal for e in entries),
            dominance=_mean(e.dominance for e in entries),
        )
    raise LexiconError(f"unknown merge policy {policy!r}")


@dataclass
class ValenceLexicon:
    """Entries keyed by (word, lang), with an optional train/validation split."""

    entries: dict[tuple[str, str], LexiconEntry] = field(default_factory=dict)
    split: dict[tuple[str, str], str] = field(default_factory=dict)

    @classmethod
    def from_entries(cls, entries: Iterable[LexiconEntry], policy: str = "error") -> "ValenceLexicon":
        groups: dict[tuple[str, str], list[LexiconEntry]] = {}
        for e in entries:
            groups.setdefault(e.key, []).append(e)
        dupes = sorted(k for k, v in groups.items() if len(v) > 1)
        if dupes and policy == "error":
            raise LexiconError(f"duplicate keys: {dupes}")
        return cls({k: _combine(v, policy) for k, v in groups.items()})

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.sorted_entries())

    def __contains__(self, key):
        return key in self.entries

    def __getitem__(self, key) -> LexiconEntry:
        return self.entries[key]

    def keys(self) -> set[tuple[str, str]]:
        return set(self.entries)

    def sorted_entries(self) -> list[LexiconEntry]:
        return [self.entries[k] for k in sorted(self.entries, key=_canonical_key)]

    def languages(self) -> set[str]:
        return {lang for _, lang in self.entries}

    def subset(self, keys: Iterable[tuple[str, str]]) -> "ValenceLexicon":
        keys = list(keys)
        return ValenceLexicon(
            {k: self.entries[k] for k in keys},
            {k: self.split[k] for k in keys if k in self.split},
        )

    def split_part(self, name: str) -> "ValenceLexicon":
        return self.subset(k for k in self.entries if self.split.get(k) == name)

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for e in self.sorted_entries():
            h.update(_format_row(e, True).encode("utf-8"))
            h.update(b"\n")
        return h.hexdigest()


def merge_lexicons(a: ValenceLexicon, b: ValenceLexicon, policy: str = "mean") -> ValenceLexicon:
    if policy not in MERGE_POLICIES:
        raise LexiconError(f"unknown merge policy {policy!r}")
    collisions = sorted(a.keys() & b.keys(), key=_canonical_key)
    if collisions and policy == "error":
        raise LexiconError(f"colliding keys: {collisions}")
    out = dict(a.entries)
    for key, entry in b.entries.items():
        out[key] = _combine([out[key], entry], policy) if key in out else entry
    split = dict(b.split)
    split.update(a.split)
    return ValenceLexicon(out, {k: v for k, v in split.items() if k in out})


def seeded_rank(key: tuple[str, str], seed: int) -> str:
    word, lang = key
    return hashlib.sha256(f"{seed}\x00{lang}\x00{word}".encode("utf-8")).hexdigest()


def assign_split(
    keys: Iterable[tuple[str, str]], ratio: float = 0.8, seed: int = 0
) -> dict[tuple[str, str], str]:
    """Deterministic train/validation split of one batch of keys.

    Keys are ordered by a seeded hash and the first round(ratio * n) go to
    train, so the batch deviates from the exact ratio by at most one entry.
    """
    if not 0.0 < ratio < 1.0:
        raise LexiconError(f"split ratio must be in (0, 1), got {ratio}")
    ordered = sorted(keys, key=lambda k: seeded_rank(k, seed))
    n_train = int(math.floor(ratio * len(ordered) + 0.5))
    return {k: ("train" if i < n_train else "validation") for i, k in enumerate(ordered)}


# --- TSV I/O ---------------------------------------------------------------

BASE_COLUMNS = ["word", "lang", "valence"]
VAD_COLUMNS = BASE_COLUMNS + ["arousal", "dominance"]


def _fmt(value: float | None) -> str:
    if value is None:
        return ""
    return repr(float(value))


def _format_row(e: LexiconEntry, with_vad: bool) -> str:
    cells = [e.word, e.lang, _fmt(e.valence)]
    if with_vad:
        cells += [_fmt(e.arousal), _fmt(e.dominance)]
    return "\t".join(cells)


def load_lexicon(path, merge: str | None = None, source: Source = Source.ORIGINAL) -> ValenceLexicon:
    """Read a lexicon TSV.

    A leading ``#scale=raw`` pragma marks [0, 1] scores, which are normalized on
    load. Duplicate keys raise unless ``merge`` is ``mean`` or ``keep_first``.
    """
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    scale = "normalized"
    lineno = 0
    if lines and lines[0].startswith("#"):
        m = re.fullmatch(r"#\s*scale\s*=\s*(raw|normalized)\s*", lines[0])
        if not m:
            raise LexiconError(f"{path}:1: unrecognized pragma {lines[0]!r}")
        scale = m.group(1)
        lineno = 1
    if lineno >= len(lines):
        raise LexiconError(f"{path}: missing header line")
    header = lines[lineno].split("\t")
    if header not in (BASE_COLUMNS, VAD_COLUMNS):
        raise LexiconError(f"{path}:{lineno + 1}: bad header {header!r}")

    def convert(cell: str, lineno: int, optional: bool):
        if cell == "" and optional:
            return None
        try:
            value = float(cell)
        except ValueError:
            raise LexiconError(f"{path}:{lineno}: not a number: {cell!r}") from None
        return normalize_raw(value) if scale == "raw" else value

    entries = []
    for i, line in enumerate(lines[lineno + 1:], start=lineno + 2):
        if not line.strip():
            continue
        cells = line.split("\t")
        if len(cells) != len(header):
            raise LexiconError(f"{path}:{i}: expected {len(header)} columns, got {len(cells)}")
        try:
            entries.append(
                LexiconEntry(
                    word=cells[0],
                    lang=cells[1],
                    valence=convert(cells[2], i, False),
                    arousal=convert(cells[3], i, True) if len(cells) > 3 else None,
                    dominance=convert(cells[4], i, True) if len(cells) > 4 else None,
                    source=source,
                )
            )
        except LexiconError as exc:
            raise LexiconError(f"{path}:{i}: {exc}") from None
    try:
        return ValenceLexicon.from_entries(entries, policy=merge or "error")
    except LexiconError as exc:
        raise LexiconError(f"{path}: {exc} (pass a merge policy to combine them)") from None


def dumps_lexicon(lexicon: ValenceLexicon) -> str:
    rows = lexicon.sorted_entries()
    with_vad = any(e.arousal is not None or e.dominance is not None for e in rows)
    out = ["\t".join(VAD_COLUMNS if with_vad else BASE_COLUMNS)]
    out += [_format_row(e, with_vad) for e in rows]
    return "\n".join(out) + "\n"


def save_lexicon(lexicon: ValenceLexicon, path) -> None:
    Path(path).write_text(dumps_lexicon(lexicon), encoding="utf-8")


def lexicon_from_mapping(values: Mapping[tuple[str, str], float], source=Source.ORIGINAL) -> ValenceLexicon:
    return ValenceLexicon.from_entries(
        LexiconEntry(word, lang, v, source=source) for (word, lang), v in values.items()
    )
