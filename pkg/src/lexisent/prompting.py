"""LLM prompting baseline scored by normalized label log-likelihood.

Each label is scored as the mean per-token log-probability of the label
verbalizer given the prompt text before it; the highest-scoring label wins and
ties go to the earliest label in canonical order. ``normalization="full"``
scores the mean over the whole rendered prompt instead.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from typing import Mapping, Protocol, Sequence

from .evaluation import weighted_macro_f1
from .training import exact_mean

logger = logging.getLogger(__name__)

INPUT = "[INPUT]"
OPTIONS = "[OPTIONS]"
LABELS_SLOT = "[LABELS]"
PLACEHOLDERS = (INPUT, OPTIONS, LABELS_SLOT)

SCORER_URL_ENV = "LEXISENT_SCORER_URL"


class PromptError(RuntimeError):
    pass


@dataclass(frozen=True)
class PromptTemplate:
    id: int
    text: str

    def __post_init__(self):
        if self.text.count(INPUT) != 1 or self.text.count(LABELS_SLOT) != 1:
            raise PromptError(f"template {self.id}: [INPUT] and [LABELS] must each appear exactly once")
        if self.text.count(OPTIONS) > 1:
            raise PromptError(f"template {self.id}: [OPTIONS] appears more than once")

    @property
    def uses_options(self) -> bool:
        return OPTIONS in self.text

    def split(self, input_text: str, options: Sequence[str] | None) -> str:
        """The rendered prompt up to (not including) the label slot."""
        prefix = self.text.split(LABELS_SLOT, 1)[0]
        if OPTIONS in self.text.split(LABELS_SLOT, 1)[1]:
            raise PromptError(f"template {self.id}: [OPTIONS] after [LABELS] is not supported")
        if self.uses_options:
            if not options:
                raise PromptError(f"template {self.id} needs [OPTIONS] but no options were given")
            prefix = prefix.replace(OPTIONS, ", ".join(options))
        return prefix.replace(INPUT, input_text)


def load_templates() -> list[PromptTemplate]:
    """The six English sentiment prompts shipped with the package."""
    root = resources.files("lexisent") / "templates"
    return [PromptTemplate(i, (root / f"{i}.txt").read_text(encoding="utf-8")) for i in range(1, 7)]


def render(template: PromptTemplate, input_text: str, options: Sequence[str] | None, label: str) -> str:
    return template.split(input_text, options) + label


class CompletionScorer(Protocol):
    def score(self, context: str, completion: str) -> list[float]: ...


class MockScorer:
    """Table-driven scorer for tests and offline runs.

    ``table`` maps a completion string, or a ``(context, completion)`` pair
    for context-specific entries, to its token log-probabilities.
    """

    def __init__(self, table: Mapping, default: Sequence[float] | None = None):
        self.table = dict(table)
        self.default = None if default is None else list(default)
        self.calls = 0

    def score(self, context: str, completion: str) -> list[float]:
        self.calls += 1
        for key in ((context, completion), completion):
            if key in self.table:
                return list(self.table[key])
        if self.default is not None:
            return list(self.default)
        raise KeyError(f"no scores for completion {completion!r}")

    @classmethod
    def from_json(cls, path) -> "MockScorer":
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        return cls(data.get("completions", {}), data.get("default"))


class RemoteScorer:
    """HTTP scorer: POST {"context", "completion"} -> {"token_logprobs": [...]}.

    Failed requests are retried with exponential backoff. Responses are cached
    by (context, completion) so reruns do not hit the service again.
    """

    def __init__(self, url: str, retries: int = 3, backoff: float = 0.5, timeout: float = 30.0, client=None):
        import httpx

        self.url = url
        self.retries = retries
        self.backoff = backoff
        self.client = client or httpx.Client(timeout=timeout)
        self.cache: dict[str, list[float]] = {}
        self._lock = threading.Lock()

    @staticmethod
    def cache_key(context: str, completion: str) -> str:
        return hashlib.sha256(json.dumps([context, completion]).encode("utf-8")).hexdigest()

    def score(self, context: str, completion: str) -> list[float]:
        key = self.cache_key(context, completion)
        cached = self.cache.get(key)
        if cached is not None:
            return list(cached)
        last = None
        for attempt in range(self.retries + 1):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                resp = self.client.post(self.url, json={"context": context, "completion": completion})
                resp.raise_for_status()
                values = [float(v) for v in resp.json()["token_logprobs"]]
                break
            except Exception as exc:
                last = exc
                logger.warning("scorer request failed (attempt %d): %s", attempt + 1, exc)
        else:
            raise PromptError(f"scorer failed after {self.retries + 1} attempts: {last}")
        with self._lock:
            self.cache[key] = values
        return list(values)


def _mean_logprob(values: Sequence[float]) -> float:
    values = [float(v) for v in values]
    if not values:
        raise PromptError("scorer returned no token log-probabilities")
    if not all(math.isfinite(v) for v in values):
        raise PromptError(f"scorer returned non-finite log-probabilities {values}")
    return exact_mean(values)


@dataclass
class Classification:
    label: str
    scores: dict[str, float]
    tie: bool


def classify(scorer: CompletionScorer, template: PromptTemplate, text: str, labels: Sequence[str],
             normalization: str = "label") -> Classification:
    """Pick the label with the highest mean token log-probability.

    ``labels`` are given in canonical order, which also breaks ties.
    """
    labels = list(labels)
    if len(labels) < 2 or len(set(labels)) != len(labels):
        raise PromptError(f"need at least two distinct labels, got {labels}")
    context = template.split(text, labels)
    scores = {}
    for label in labels:
        try:
            if normalization == "label":
                values = scorer.score(context, label)
            elif normalization == "full":
                values = scorer.score("", context + label)
            else:
                raise PromptError(f"unknown normalization {normalization!r}")
            scores[label] = _mean_logprob(values)
        except PromptError as exc:
            raise PromptError(f"template {template.id}, label {label!r}: {exc}") from None
        except Exception as exc:
            raise PromptError(f"template {template.id}, label {label!r}: scorer error: {exc}") from exc
    best = max(scores.values())
    winners = [lab for lab in labels if scores[lab] == best]
    return Classification(winners[0], scores, len(winners) > 1)


@dataclass
class PromptEvalResult:
    f1: dict[int, float] = field(default_factory=dict)
    ties: dict[int, int] = field(default_factory=dict)
    errors: dict[int, str] = field(default_factory=dict)
    predictions: dict[int, list[str]] = field(default_factory=dict)

    @property
    def complete(self) -> bool:
        return not self.errors

    @property
    def average(self) -> float | None:
        if not self.complete or not self.f1:
            return None
        return exact_mean(self.f1.values())

    def to_dict(self) -> dict:
        return {
            "complete": self.complete,
            "average": self.average,
            "per_template": {str(k): v for k, v in sorted(self.f1.items())},
            "ties": {str(k): v for k, v in sorted(self.ties.items())},
            "errors": {str(k): v for k, v in sorted(self.errors.items())},
        }


def evaluate_prompts(scorer: CompletionScorer, templates: Sequence[PromptTemplate], texts: Sequence[str],
                     gold: Sequence[str], labels: Sequence[str], normalization: str = "label",
                     parallelism: int = 1, require_all: bool = True) -> PromptEvalResult:
    """Weighted macro-F1 of every template and their mean.

    A template that fails on any text is recorded in ``errors`` and the
    average is withheld rather than taken over the remaining templates.
    """
    if require_all and sorted(t.id for t in templates) != list(range(1, 7)):
        raise PromptError(f"expected templates 1-6, got {sorted(t.id for t in templates)}")
    if len(texts) != len(gold):
        raise ValueError("texts and gold labels differ in length")
    result = PromptEvalResult()

    def run(template: PromptTemplate):
        with ThreadPoolExecutor(max_workers=max(1, parallelism)) as pool:
            outcomes = list(pool.map(lambda t: classify(scorer, template, t, labels, normalization), texts))
        return outcomes

    for template in templates:
        try:
            outcomes = run(template)
        except PromptError as exc:
            result.errors[template.id] = str(exc)
            logger.error("template %d failed: %s", template.id, exc)
            continue
        preds = [o.label for o in outcomes]
        result.predictions[template.id] = preds
        result.ties[template.id] = sum(o.tie for o in outcomes)
        result.f1[template.id] = weighted_macro_f1(gold, preds)
    return result
