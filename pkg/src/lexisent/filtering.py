"""Iterative self-training filter for translated lexicon entries.

A regressor trained on the English lexicon scores every translated
candidate; candidates whose predicted valence lies within ``alpha`` of the
valence they inherited are accepted and join the training data, and the
model is retrained. The loop ends when an iteration accepts fewer than
``beta`` candidates, the pool runs dry, or the iteration cap is hit.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .encoder import MSE, DivergenceError, EncoderBackend, TrainConfig, fit
from .lexicon import (
    VALENCE_MAX,
    VALENCE_MIN,
    LexiconError,
    Source,
    ValenceLexicon,
    assign_split,
)

logger = logging.getLogger(__name__)

BELOW_BETA = "below_beta"
POOL_EMPTY = "pool_empty"
MAX_ITERATIONS = "max_iterations"


@dataclass
class FilterConfig:
    alpha: float = 2.5
    beta: int = 1000
    split_ratio: float = 0.8
    max_iterations: int = 50
    cold_start: bool = False
    train: TrainConfig = field(default_factory=TrainConfig.lexicon_pretraining)

    def __post_init__(self):
        if not self.alpha >= 0:
            raise ValueError(f"alpha must be non-negative, got {self.alpha}")
        if int(self.beta) != self.beta or self.beta < 1:
            raise ValueError(f"beta must be a positive integer, got {self.beta}")
        if not 0.0 < self.split_ratio < 1.0:
            raise ValueError(f"split_ratio must be in (0, 1), got {self.split_ratio}")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")


@dataclass
class FilterCandidate:
    key: tuple[str, str]
    original_valence: float
    predicted_valence: float
    accepted_at_iteration: int | None = None


@dataclass
class IterationRecord:
    iteration: int
    accepted: int
    pool_size: int
    val_loss: float
    train_size: int

    def to_dict(self) -> dict:
        return {"iteration": self.iteration, "accepted": self.accepted, "pool_size": self.pool_size,
                "val_loss": self.val_loss, "train_size": self.train_size}


@dataclass
class FilterTrace:
    records: list[IterationRecord] = field(default_factory=list)
    termination: str | None = None
    initial_pool: int = 0
    candidates: dict[tuple[str, str], FilterCandidate] = field(default_factory=dict)

    @property
    def accepted_total(self) -> int:
        return sum(r.accepted for r in self.records)

    def accepted_keys(self) -> set[tuple[str, str]]:
        return {k for k, c in self.candidates.items() if c.accepted_at_iteration is not None}

    def to_jsonl(self) -> str:
        lines = [json.dumps({**r.to_dict(), "termination": self.termination if i == len(self.records) - 1 else None})
                 for i, r in enumerate(self.records)]
        return "".join(line + "\n" for line in lines)

    def save(self, path) -> None:
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")


def _training_sets(lexicon: ValenceLexicon):
    parts = {"train": ([], []), "validation": ([], [])}
    for entry in lexicon.sorted_entries():
        texts, targets = parts[lexicon.split[entry.key]]
        texts.append(entry.word)
        targets.append(entry.valence)
    return parts["train"], parts["validation"]


def run_filter(base_en: ValenceLexicon, candidates: ValenceLexicon, config: FilterConfig,
               backend: EncoderBackend, seed: int = 0) -> tuple[ValenceLexicon, FilterTrace]:
    """Filter ``candidates`` by agreement with a model trained on ``base_en``.

    Returns ``base_en`` plus every accepted candidate (with train/validation
    assignments in ``split``) and the per-iteration trace. The remaining pool
    is re-scored with the latest model on every iteration.
    """
    if len(base_en) == 0:
        raise LexiconError("base lexicon is empty")
    if base_en.languages() - {"en"}:
        raise LexiconError(f"base lexicon must be English-only, found {sorted(base_en.languages())}")
    overlap = base_en.keys() & candidates.keys()
    if overlap:
        raise LexiconError(f"candidates overlap the base lexicon: {sorted(overlap)[:5]}")

    train_config = replace(config.train, seed=seed)
    data = ValenceLexicon(dict(base_en.entries), assign_split(base_en.keys(), config.split_ratio, seed))
    pool = sorted(candidates.keys(), key=lambda k: (k[1], k[0]))
    trace = FilterTrace(initial_pool=len(pool))
    initial_state = backend.get_state()
    backend.reset_head(1)

    def train(iteration):
        if config.cold_start:
            backend.set_state(initial_state)
            backend.reset_head(1)
        try:
            return fit(backend, *_training_sets(data), MSE, train_config)
        except DivergenceError as exc:
            raise DivergenceError(f"filter iteration {iteration}: {exc}") from None

    result = train(1)
    iteration = 0
    while True:
        iteration += 1
        scores = np.clip(backend.predict([k[0] for k in pool])[:, 0], VALENCE_MIN, VALENCE_MAX) if pool else []
        accepted = []
        for key, predicted in zip(pool, scores):
            original = candidates[key].valence
            trace.candidates[key] = FilterCandidate(key, original, float(predicted))
            if abs(float(predicted) - original) < config.alpha:
                accepted.append(key)
                trace.candidates[key].accepted_at_iteration = iteration
        taken = set(accepted)
        pool = [k for k in pool if k not in taken]
        data.split.update(assign_split(accepted, config.split_ratio, seed))
        for key in accepted:
            data.entries[key] = replace(candidates[key], source=Source.ACCEPTED)
        trace.records.append(IterationRecord(iteration, len(accepted), len(pool),
                                             result.best_val_loss, len(data.split_part("train"))))
        logger.info("filter iteration %d: accepted %d, pool %d", iteration, len(accepted), len(pool))

        if not pool:
            trace.termination = POOL_EMPTY
        elif len(accepted) < config.beta:
            trace.termination = BELOW_BETA
        elif iteration >= config.max_iterations:
            trace.termination = MAX_ITERATIONS
        if trace.termination:
            break
        result = train(iteration + 1)

    return data, trace


def rejected_lexicon(candidates: ValenceLexicon, trace: FilterTrace) -> ValenceLexicon:
    accepted = trace.accepted_keys()
    return candidates.subset(k for k in candidates.keys() if k not in accepted)
