"""Lexicon pretraining, sentence-level fine-tuning, few-shot sampling, seed runs."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .encoder import (
    CROSS_ENTROPY,
    MSE,
    EncoderBackend,
    ReferenceEncoder,
    TrainConfig,
    backend_from_dict,
    fit,
)
from .lexicon import BINARY, LABELS, THREE_WAY, NEUTRAL, ValenceLexicon, assign_split, class_of

logger = logging.getLogger(__name__)

REGRESSION = "regression"
CLASSIFICATION_BINARY = "classification_binary"
CLASSIFICATION_3WAY = "classification_3way"
PRETRAIN_OBJECTIVES = (REGRESSION, CLASSIFICATION_BINARY, CLASSIFICATION_3WAY)

CHECKPOINT_FORMAT = "lexisent-checkpoint/1"
SPLITS = ("train", "dev", "test")


class DatasetError(ValueError):
    pass


# --- checkpoints -----------------------------------------------------------------

@dataclass
class Checkpoint:
    """A trained backend plus what it predicts.

    ``labels`` is None for regression checkpoints (one valence output) and the
    ordered label vocabulary for classification checkpoints.
    """

    backend: EncoderBackend
    labels: tuple[str, ...] | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def is_regression(self) -> bool:
        return self.labels is None

    def to_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "labels": None if self.labels is None else list(self.labels),
            "metadata": self.metadata,
            "backend": self.backend.to_dict(),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def content_hash(self) -> str:
        return hashlib.sha256(self.dumps().encode("utf-8")).hexdigest()

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def from_dict(cls, data: dict) -> "Checkpoint":
        if data.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format {data.get('format')!r}")
        labels = data["labels"]
        return cls(backend_from_dict(data["backend"]),
                   None if labels is None else tuple(labels), data.get("metadata", {}))

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# --- sentence datasets -----------------------------------------------------------------

@dataclass
class LabeledSentenceSet:
    """Named splits of (text, label) records over a declared label vocabulary."""

    labels: tuple[str, ...]
    splits: dict[str, list[tuple[str, str]]] = field(default_factory=dict)

    def __post_init__(self):
        self.labels = tuple(self.labels)
        if len(set(self.labels)) != len(self.labels):
            raise DatasetError(f"duplicate labels in {self.labels}")
        for name, records in self.splits.items():
            for text, label in records:
                if label not in self.labels:
                    raise DatasetError(f"{name}: label {label!r} not in {self.labels}")
                if any(c in text for c in "\t\n\r"):
                    raise DatasetError(f"{name}: text contains tab or newline: {text!r}")

    def texts(self, split: str) -> list[str]:
        return [t for t, _ in self.splits[split]]

    def gold(self, split: str) -> list[str]:
        return [lab for _, lab in self.splits[split]]

    def label_ids(self, split: str) -> np.ndarray:
        index = {lab: i for i, lab in enumerate(self.labels)}
        return np.array([index[lab] for _, lab in self.splits[split]], dtype=np.int64)


def read_sentence_tsv(path) -> list[tuple[str, str]]:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].split("\t") != ["text", "label"]:
        raise DatasetError(f"{path}:1: expected header 'text<TAB>label'")
    records = []
    for i, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = line.split("\t")
        if len(cells) != 2:
            raise DatasetError(f"{path}:{i}: expected 2 columns, got {len(cells)}")
        text, label = cells[0].strip(), cells[1].strip()
        if not text or not label:
            raise DatasetError(f"{path}:{i}: empty text or label")
        records.append((text, label))
    return records


def write_sentence_tsv(records, path) -> None:
    rows = ["text\tlabel"] + [f"{t}\t{lab}" for t, lab in records]
    Path(path).write_text("\n".join(rows) + "\n", encoding="utf-8")


def load_dataset(directory, labels: Sequence[str] | None = None) -> LabeledSentenceSet:
    """Load ``train/dev/test.tsv`` from a ``<dataset>/<lang>/`` directory.

    Missing splits are allowed; the label vocabulary defaults to the sorted
    set of labels seen across all splits.
    """
    directory = Path(directory)
    splits = {name: read_sentence_tsv(directory / f"{name}.tsv")
              for name in SPLITS if (directory / f"{name}.tsv").exists()}
    if not splits:
        raise DatasetError(f"{directory}: no train/dev/test.tsv files")
    if labels is None:
        labels = sorted({lab for recs in splits.values() for _, lab in recs})
    return LabeledSentenceSet(tuple(labels), splits)


def save_dataset(dataset: LabeledSentenceSet, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, records in dataset.splits.items():
        write_sentence_tsv(records, directory / f"{name}.tsv")


def fewshot_sample(dataset: LabeledSentenceSet, n_train: int = 100, n_dev: int = 50,
                   seed: int = 0, stratified: bool = False) -> LabeledSentenceSet:
    """Sample a few-shot train/dev split without replacement.

    Sampled rows keep their original order; the test split passes through.
    """
    rng = np.random.default_rng(seed)
    out = {}
    for name, n in (("train", n_train), ("dev", n_dev)):
        records = dataset.splits.get(name, [])
        if n > len(records):
            raise DatasetError(f"{name} split needs {n} rows, only {len(records)} available")
        if stratified:
            idx = _stratified_indices(records, n, dataset.labels, rng)
        else:
            idx = rng.choice(len(records), size=n, replace=False)
        out[name] = [records[i] for i in sorted(idx)]
    if "test" in dataset.splits:
        out["test"] = list(dataset.splits["test"])
    return LabeledSentenceSet(dataset.labels, out)


def _stratified_indices(records, n, labels, rng):
    by_label = {lab: [i for i, (_, l) in enumerate(records) if l == lab] for lab in labels}
    total = len(records)
    # largest-remainder allocation proportional to label frequency
    quotas = {lab: n * len(ids) / total for lab, ids in by_label.items()}
    counts = {lab: int(math.floor(q)) for lab, q in quotas.items()}
    leftover = n - sum(counts.values())
    for lab in sorted(labels, key=lambda l: counts[l] - quotas[l])[:leftover]:
        counts[lab] += 1
    picked = []
    for lab in labels:
        if counts[lab]:
            picked.extend(rng.choice(by_label[lab], size=counts[lab], replace=False).tolist())
    return picked


# --- pretraining ----------------------------------------------------------------------

@dataclass
class PretrainJob:
    lexicon: ValenceLexicon
    objective: str = REGRESSION
    config: TrainConfig = field(default_factory=TrainConfig.lexicon_pretraining)
    seed: int = 0

    def __post_init__(self):
        if self.objective not in PRETRAIN_OBJECTIVES:
            raise ValueError(f"unknown objective {self.objective!r}; expected one of {PRETRAIN_OBJECTIVES}")


def lexicon_training_sets(lexicon: ValenceLexicon, objective: str, seed: int = 0, ratio: float = 0.8):
    """(texts, targets) for train and validation, splitting 80:20 when unsplit."""
    split = dict(lexicon.split)
    missing = [k for k in lexicon.entries if k not in split]
    if missing:
        split.update(assign_split(missing, ratio, seed))
    mode = {CLASSIFICATION_BINARY: BINARY, CLASSIFICATION_3WAY: THREE_WAY}.get(objective)
    parts = {"train": ([], []), "validation": ([], [])}
    for entry in lexicon.sorted_entries():
        texts, targets = parts[split[entry.key]]
        texts.append(entry.word)
        if mode is None:
            targets.append(entry.valence)
        else:
            targets.append(LABELS[mode].index(class_of(entry.valence, mode)))
    return parts["train"], parts["validation"]


def pretrain(job: PretrainJob, backend: EncoderBackend | None = None) -> Checkpoint:
    """Train a backend to predict word valence (or its class) from the word."""
    if len(job.lexicon) == 0:
        raise ValueError("cannot pretrain on an empty lexicon")
    config = replace(job.config, seed=job.seed)
    if backend is None:
        backend = ReferenceEncoder(seed=job.seed, dropout=config.dropout, max_length=config.max_length)
    train, val = lexicon_training_sets(job.lexicon, job.objective, job.seed)
    if not train[0] or not val[0]:
        raise ValueError(f"lexicon of {len(job.lexicon)} entries is too small for a train/validation split")

    warnings = []
    if job.objective == REGRESSION:
        labels, loss = None, MSE
        backend.reset_head(1)
    else:
        mode = BINARY if job.objective == CLASSIFICATION_BINARY else THREE_WAY
        labels, loss = LABELS[mode], CROSS_ENTROPY
        backend.reset_head(len(labels))
        if mode == THREE_WAY and LABELS[mode].index(NEUTRAL) not in set(train[1]) | set(val[1]):
            warnings.append("no neutral words in lexicon")
            logger.warning("3-way pretraining lexicon has no neutral words")

    result = fit(backend, train, val, loss, config)
    metadata = {
        "stage": "pretrain",
        "objective": job.objective,
        "lexicon_hash": job.lexicon.content_hash(),
        "config": config.to_dict(),
        "seed": job.seed,
        "best_epoch": result.best_epoch,
        "best_val_loss": result.best_val_loss,
        "curve": result.curve,
        "warnings": warnings,
        "version": __version__,
    }
    return Checkpoint(backend, labels, metadata)


# --- fine-tuning ----------------------------------------------------------------------

@dataclass
class FinetuneJob:
    dataset: LabeledSentenceSet
    config: TrainConfig = field(default_factory=TrainConfig.sentence_finetuning)
    base: Checkpoint | None = None
    seed: int = 0


def check_label_consistency(dataset: LabeledSentenceSet) -> None:
    train_labels = set(dataset.gold("train"))
    for name in ("dev", "test"):
        extra = set(dataset.gold(name)) - train_labels if name in dataset.splits else set()
        if extra:
            raise DatasetError(f"{name} split has labels missing from train: {sorted(extra)}")


def finetune(job: FinetuneJob, backend: EncoderBackend | None = None) -> tuple[Checkpoint, dict]:
    """Cross-entropy fine-tuning on sentence data, early-stopped on dev loss.

    Starting from ``job.base`` keeps its encoder and replaces the head with one
    sized for the dataset's labels. Returns the checkpoint and the fit curve.
    """
    ds = job.dataset
    for name in ("train", "dev"):
        if not ds.splits.get(name):
            raise DatasetError(f"fine-tuning needs a non-empty {name} split")
    check_label_consistency(ds)
    if len(set(ds.gold("train"))) < 2:
        raise DatasetError("training split contains a single class")

    config = replace(job.config, seed=job.seed)
    if backend is None:
        if job.base is not None:
            backend = backend_from_dict(job.base.backend.to_dict())
        else:
            backend = ReferenceEncoder(seed=job.seed, dropout=config.dropout, max_length=config.max_length)
    backend.reset_head(len(ds.labels))
    result = fit(backend, (ds.texts("train"), ds.label_ids("train")),
                 (ds.texts("dev"), ds.label_ids("dev")), CROSS_ENTROPY, config)
    metadata = {
        "stage": "finetune",
        "labels": list(ds.labels),
        "base": None if job.base is None else job.base.content_hash(),
        "config": config.to_dict(),
        "seed": job.seed,
        "best_epoch": result.best_epoch,
        "best_val_loss": result.best_val_loss,
        "curve": result.curve,
        "version": __version__,
    }
    return Checkpoint(backend, ds.labels, metadata), {
        "initial_val_loss": result.initial_val_loss, "curve": result.curve}


def exact_mean(values) -> float:
    """Arithmetic mean, correctly rounded (five copies of m average to m)."""
    values = list(values)
    if not values:
        raise ValueError("mean of an empty sequence")
    return float(sum(map(Fraction, values)) / len(values))


# --- seeds ------------------------------------------------------------------------------

@dataclass
class SeedRuns:
    seeds: list[int]
    checkpoints: list
    metrics: list[float]

    @property
    def mean(self) -> float:
        return exact_mean(self.metrics)


def run_seeds(run: Callable[[int], tuple[object, float]], seeds: Sequence[int] = (0, 1, 2, 3, 4)) -> SeedRuns:
    """Run ``run(seed) -> (checkpoint, metric)`` once per seed and average the metric."""
    seeds = list(seeds)
    if not seeds:
        raise ValueError("at least one seed is required")
    checkpoints, metrics = [], []
    for seed in seeds:
        try:
            ckpt, metric = run(seed)
        except Exception as exc:
            raise RuntimeError(f"seed {seed}: {exc}") from exc
        checkpoints.append(ckpt)
        metrics.append(float(metric))
    return SeedRuns(seeds, checkpoints, metrics)
