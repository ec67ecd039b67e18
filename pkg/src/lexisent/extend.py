"""Project English valence scores onto other languages through translation edges."""

from __future__ import annotations

import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .lexicon import LexiconEntry, LexiconError, Source, ValenceLexicon, _LANG_RE

EDGE_COLUMNS = ["src_word", "src_lang", "tgt_word", "tgt_lang"]


@dataclass(frozen=True)
class TranslationEdge:
    src_word: str
    src_lang: str
    tgt_word: str
    tgt_lang: str

    def __post_init__(self):
        for name in ("src_word", "tgt_word"):
            word = getattr(self, name).strip()
            if not word or any(c in word for c in "\t\n\r"):
                raise LexiconError(f"invalid {name} {getattr(self, name)!r}")
            object.__setattr__(self, name, word)
        for name in ("src_lang", "tgt_lang"):
            if not _LANG_RE.match(getattr(self, name)):
                raise LexiconError(f"invalid {name} {getattr(self, name)!r}")
        if self.src_lang == self.tgt_lang:
            raise LexiconError(f"edge within one language: {self}")


@dataclass
class ProjectionReport:
    added: dict[str, int] = field(default_factory=dict)
    skipped: int = 0
    merged: int = 0
    # edges outside target_langs or not starting from English
    ignored: int = 0
    usable: int = 0

    def balanced(self) -> bool:
        return sum(self.added.values()) + self.merged == self.usable

    def to_json(self) -> str:
        return json.dumps(
            {
                "added": dict(sorted(self.added.items())),
                "total_added": sum(self.added.values()),
                "skipped": self.skipped,
                "merged": self.merged,
                "ignored": self.ignored,
                "usable_edges": self.usable,
            },
            indent=2,
            sort_keys=True,
        )


def project_scores(
    base: ValenceLexicon,
    edges: Iterable[TranslationEdge],
    target_langs: Iterable[str],
    case_fold: bool = False,
) -> tuple[ValenceLexicon, ProjectionReport]:
    """Give every English->L translation the valence of its English source.

    Targets reached from several sources get the mean of those valences.
    Only the projected entries are returned; merging with ``base`` is left
    to the caller. Edges whose English word is not in ``base`` are skipped.
    """
    targets = set(target_langs)
    if not targets:
        raise LexiconError("target_langs is empty")

    def norm(word):
        return word.casefold() if case_fold else word

    english: dict[str, list[float]] = defaultdict(list)
    for (word, lang), entry in base.entries.items():
        if lang == "en":
            english[norm(word)].append(entry.valence)
    if not english:
        raise LexiconError("base lexicon has no English entries")
    # case folding may collapse several English entries onto one form
    english_score = {w: math.fsum(v) / len(v) for w, v in english.items()}

    report = ProjectionReport()
    sources: dict[tuple[str, str], list[float]] = defaultdict(list)
    for edge in edges:
        if edge.src_lang != "en" or edge.tgt_lang not in targets:
            report.ignored += 1
            continue
        score = english_score.get(norm(edge.src_word))
        if score is None:
            report.skipped += 1
            continue
        report.usable += 1
        sources[(edge.tgt_word, edge.tgt_lang)].append(score)

    entries = []
    added = Counter()
    for (word, lang), scores in sources.items():
        entries.append(LexiconEntry(word, lang, math.fsum(scores) / len(scores), source=Source.PROJECTED))
        added[lang] += 1
        report.merged += len(scores) - 1
    report.added = dict(added)
    return ValenceLexicon.from_entries(entries), report


def load_edges(path) -> list[TranslationEdge]:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].split("\t") != EDGE_COLUMNS:
        raise LexiconError(f"{path}:1: expected header {EDGE_COLUMNS}")
    edges = []
    for i, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = line.split("\t")
        if len(cells) != 4:
            raise LexiconError(f"{path}:{i}: expected 4 columns, got {len(cells)}")
        try:
            edges.append(TranslationEdge(*cells))
        except LexiconError as exc:
            raise LexiconError(f"{path}:{i}: {exc}") from None
    return edges


def save_edges(edges: Iterable[TranslationEdge], path) -> None:
    rows = ["\t".join(EDGE_COLUMNS)]
    rows += ["\t".join((e.src_word, e.src_lang, e.tgt_word, e.tgt_lang)) for e in edges]
    Path(path).write_text("\n".join(rows) + "\n", encoding="utf-8")
