"""Zero-shot prediction, weighted macro-F1, and language-group reports."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .lexicon import LABELS, MODES, VALENCE_MAX, VALENCE_MIN, class_of
from .training import Checkpoint, exact_mean

REPORT_SCHEMA_VERSION = 1


@dataclass
class PredictionRecord:
    text: str
    pred: str
    score: float | list[float]
    gold: str | None = None
    model: str | None = None

    def to_json(self) -> str:
        return json.dumps({"text": self.text, "gold": self.gold, "pred": self.pred,
                           "score": self.score, "model": self.model}, ensure_ascii=False)


def predict_zero_shot(checkpoint: Checkpoint, texts: Sequence[str], task: str,
                      gold: Sequence[str] | None = None) -> list[PredictionRecord]:
    """Label sentences with a lexicon-pretrained (or transferred) checkpoint.

    Regression checkpoints are clamped to the valence range and mapped with the
    lexicon class boundaries; classification checkpoints take the argmax over
    their own labels, which must match the task's arity.
    """
    if task not in MODES:
        raise ValueError(f"unknown task {task!r}; expected one of {MODES}")
    texts = list(texts)
    if gold is not None and len(gold) != len(texts):
        raise ValueError("gold labels and texts differ in length")
    labels = LABELS[task]
    if not checkpoint.is_regression and len(checkpoint.labels) != len(labels):
        raise ValueError(f"checkpoint has {len(checkpoint.labels)} labels {checkpoint.labels}, "
                         f"task {task!r} needs {len(labels)}")
    if not checkpoint.is_regression and set(checkpoint.labels) != set(labels):
        raise ValueError(f"checkpoint labels {checkpoint.labels} do not match task labels {labels}")
    model_id = checkpoint.metadata.get("id") or checkpoint.content_hash()[:12]
    out = checkpoint.backend.predict(texts) if texts else np.zeros((0, 1))
    records = []
    for i, text in enumerate(texts):
        if checkpoint.is_regression:
            score = float(np.clip(out[i, 0], VALENCE_MIN, VALENCE_MAX))
            pred = class_of(score, task)
        else:
            score = [float(v) for v in out[i]]
            pred = checkpoint.labels[int(np.argmax(out[i]))]
        records.append(PredictionRecord(text, pred, score, None if gold is None else gold[i], model_id))
    return records


def write_predictions(records: Sequence[PredictionRecord], path) -> None:
    Path(path).write_text("".join(r.to_json() + "\n" for r in records), encoding="utf-8")


def read_predictions(path) -> list[PredictionRecord]:
    records = []
    for i, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
            records.append(PredictionRecord(d["text"], d["pred"], d["score"], d.get("gold"), d.get("model")))
        except (json.JSONDecodeError, KeyError) as exc:
            raise ValueError(f"{path}:{i}: bad prediction record ({exc})") from None
    return records


def weighted_macro_f1(gold: Sequence, pred: Sequence) -> float:
    """Per-class F1 averaged with weights proportional to gold support.

    Classes with zero precision and recall score 0.
    """
    gold, pred = list(gold), list(pred)
    if len(gold) != len(pred):
        raise ValueError(f"length mismatch: {len(gold)} gold vs {len(pred)} predicted")
    if not gold:
        raise ValueError("empty input")
    support = Counter(gold)
    predicted = Counter(pred)
    hits = Counter(g for g, p in zip(gold, pred) if g == p)
    total = Fraction(0)
    for label, n in support.items():
        # F1 = 2TP / (gold + predicted), equal to 2PR/(P+R) and 0 when TP = 0
        total += n * Fraction(2 * hits[label], n + predicted[label])
    return float(total / len(gold))


@dataclass
class GroupSpec:
    groups: dict[str, list[str]]
    exclusions: dict[str, list[str]] = field(default_factory=dict)
    ungrouped: list[str] = field(default_factory=list)

    def __post_init__(self):
        seen = {}
        for name, langs in self.groups.items():
            for lang in langs:
                if lang in seen:
                    raise ValueError(f"language {lang!r} is in groups {seen[lang]!r} and {name!r}")
                seen[lang] = name
        unknown = set(self.exclusions) - set(self.groups)
        if unknown:
            raise ValueError(f"exclusions for unknown groups {sorted(unknown)}")

    def group_of(self, lang: str) -> str | None:
        for name, langs in self.groups.items():
            if lang in langs:
                return name
        return None

    @classmethod
    def from_dict(cls, data: Mapping) -> "GroupSpec":
        return cls({k: list(v) for k, v in data["groups"].items()},
                   {k: list(v) for k, v in data.get("exclusions", {}).items()},
                   list(data.get("ungrouped", [])))

    @classmethod
    def load(cls, path) -> "GroupSpec":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class EvalReport:
    languages: dict[str, float]
    groups: dict[str, float]
    average: float
    seeds: dict[str, list[float]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "languages": dict(sorted(self.languages.items())),
            "groups": self.groups,
            "average": self.average,
            "seeds": dict(sorted(self.seeds.items())),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, data: Mapping) -> "EvalReport":
        if data.get("schema_version") != REPORT_SCHEMA_VERSION:
            raise ValueError(f"unsupported report schema {data.get('schema_version')!r}")
        return cls(dict(data["languages"]), dict(data["groups"]), data["average"], dict(data.get("seeds", {})))

    @classmethod
    def load(cls, path) -> "EvalReport":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _mean(values) -> float:
    return exact_mean(values)


def aggregate_report(scores: Mapping[str, float | Sequence[float]], groups: GroupSpec) -> EvalReport:
    """Group means over member languages and their unweighted mean.

    A language score may be a list of per-seed values; its mean is used and
    the breakdown is kept. Excluded languages stay in the per-language table
    but do not count towards their group's mean.
    """
    languages, seeds = {}, {}
    for lang, value in scores.items():
        if isinstance(value, (int, float)):
            languages[lang] = float(value)
        else:
            seeds[lang] = [float(v) for v in value]
            if not seeds[lang]:
                raise ValueError(f"no scores for language {lang!r}")
            languages[lang] = _mean(seeds[lang])

    members: dict[str, list[float]] = {}
    for lang, value in languages.items():
        group = groups.group_of(lang)
        if group is None:
            if lang not in groups.ungrouped:
                raise ValueError(f"language {lang!r} is in no group and not declared ungrouped")
            continue
        if lang in groups.exclusions.get(group, ()):
            continue
        members.setdefault(group, []).append(value)
    group_means = {name: _mean(members[name]) for name in groups.groups if members.get(name)}
    average = _mean(group_means.values()) if group_means else math.nan
    return EvalReport(languages, group_means, average, seeds)
