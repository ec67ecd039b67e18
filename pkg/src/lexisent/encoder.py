"""Text scoring backends and the gradient-descent trainer.

A backend turns text into a vector: tokenize, embed each token, average the
token vectors, apply a linear head (one output for regression, K logits for
classification). :class:`ReferenceEncoder` is a small numpy implementation
with hand-written gradients so the whole pipeline runs without model
downloads; :mod:`lexisent.transformer` adapts pretrained checkpoints to the
same interface.
"""

from __future__ import annotations

import copy
import hashlib
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Protocol, Sequence

import numpy as np

logger = logging.getLogger(__name__)

MSE = "mse"
CROSS_ENTROPY = "cross_entropy"
OBJECTIVES = (MSE, CROSS_ENTROPY)

UNK = "<unk>"


class EmptyInputError(ValueError):
    pass


class DivergenceError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 0.02
    max_epochs: int = 100
    patience: int = 5
    dropout: float = 0.2
    max_length: int = 10
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        for name in ("learning_rate", "max_epochs", "patience", "max_length", "batch_size"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.patience > self.max_epochs:
            raise ValueError("patience cannot exceed max_epochs")

    @classmethod
    def lexicon_pretraining(cls, **overrides) -> "TrainConfig":
        return cls(**{"max_epochs": 100, "max_length": 10, "batch_size": 4, **overrides})

    @classmethod
    def sentence_finetuning(cls, **overrides) -> "TrainConfig":
        return cls(**{"max_epochs": 20, "max_length": 512, **overrides})

    def to_dict(self) -> dict:
        return asdict(self)


class EncoderBackend(Protocol):
    """What the trainer, filter and inference code need from a model."""

    n_outputs: int
    max_length: int
    dropout: float

    def prepare(self, texts: Sequence[str]) -> None: ...
    def reset_head(self, n_outputs: int) -> None: ...
    def reseed(self, seed: int) -> None: ...
    def forward(self, text: str, mode: str = "eval") -> np.ndarray: ...
    def predict(self, texts: Sequence[str]) -> np.ndarray: ...
    def loss(self, texts: Sequence[str], targets, objective: str) -> float: ...
    def train_step(self, texts: Sequence[str], targets, objective: str, learning_rate: float) -> float: ...
    def get_state(self): ...
    def set_state(self, state) -> None: ...


# --- losses -------------------------------------------------------------------

def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def objective_loss(outputs: np.ndarray, targets, objective: str):
    """Batch loss and its gradient with respect to ``outputs``."""
    n = outputs.shape[0]
    if objective == MSE:
        t = np.asarray(targets, dtype=np.float64).reshape(n)
        diff = outputs[:, 0] - t
        grad = np.zeros_like(outputs)
        grad[:, 0] = 2.0 * diff / n
        return float(np.mean(diff * diff)), grad
    if objective == CROSS_ENTROPY:
        y = np.asarray(targets, dtype=np.int64).reshape(n)
        if y.min() < 0 or y.max() >= outputs.shape[1]:
            raise ValueError(f"class index out of range for {outputs.shape[1]} outputs")
        logp = _log_softmax(outputs)
        loss = -float(np.mean(logp[np.arange(n), y]))
        grad = np.exp(logp)
        grad[np.arange(n), y] -= 1.0
        return loss, grad / n
    raise ValueError(f"unknown objective {objective!r}")


# --- reference encoder --------------------------------------------------------

def _stable_int(*parts) -> int:
    digest = hashlib.sha256("\x00".join(map(str, parts)).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def char_ngrams(token: str, n: int = 3) -> list[str]:
    padded = f"<{token}>"
    if len(padded) <= n:
        return [padded]
    return [padded[i:i + n] for i in range(len(padded) - n + 1)]


class ReferenceEncoder:
    """Bag of word and character-trigram embeddings with a linear head.

    Each token vector is the sum of its unit rows: the word row (when the
    word was seen in training) plus the rows of its known character
    trigrams. Unseen words fall back to their trigrams alone, or
    to a shared unknown row when none of their trigrams are known. Token
    vectors are then mean-pooled, so the output is invariant to token order.
    """

    kind = "reference"

    def __init__(self, n_outputs: int = 1, dim: int = 32, dropout: float = 0.2,
                 max_length: int = 10, seed: int = 0, init_scale: float = 0.05):
        self.dim = dim
        self.dropout = dropout
        self.max_length = max_length
        self.seed = seed
        self.init_scale = init_scale
        self.vocab: dict[str, int] = {}
        self.embedding = np.zeros((0, dim))
        self._add_units([UNK])
        self.reset_head(n_outputs)
        self.reseed(seed)

    # parameters

    def _init_row(self, unit: str) -> np.ndarray:
        # row values depend only on (seed, unit) so vocabulary growth order is irrelevant
        rng = np.random.default_rng(_stable_int(self.seed, "unit", unit))
        return rng.uniform(-self.init_scale, self.init_scale, self.dim)

    def _add_units(self, units) -> None:
        new = [u for u in dict.fromkeys(units) if u not in self.vocab]
        if not new:
            return
        for u in new:
            self.vocab[u] = len(self.vocab)
        self.embedding = np.vstack([self.embedding, np.stack([self._init_row(u) for u in new])])

    def reset_head(self, n_outputs: int) -> None:
        rng = np.random.default_rng(_stable_int(self.seed, "head", n_outputs))
        self.n_outputs = n_outputs
        self.head_weight = rng.uniform(-self.init_scale, self.init_scale, (n_outputs, self.dim))
        self.head_bias = rng.uniform(-self.init_scale, self.init_scale, n_outputs)

    def reseed(self, seed: int) -> None:
        self._dropout_rng = np.random.default_rng(_stable_int(seed, "dropout"))

    def parameters(self) -> dict[str, np.ndarray]:
        return {"embedding": self.embedding, "head_weight": self.head_weight, "head_bias": self.head_bias}

    def get_state(self):
        return copy.deepcopy((self.vocab, self.parameters(), self.n_outputs))

    def set_state(self, state) -> None:
        vocab, params, n_outputs = copy.deepcopy(state)
        self.vocab = vocab
        self.n_outputs = n_outputs
        self.embedding = params["embedding"]
        self.head_weight = params["head_weight"]
        self.head_bias = params["head_bias"]

    # tokenization

    def tokenize(self, text: str) -> list[str]:
        return text.split()[: self.max_length]

    def prepare(self, texts: Sequence[str]) -> None:
        """Add the words and trigrams of ``texts`` to the vocabulary."""
        units = []
        for text in texts:
            for tok in self.tokenize(text):
                units.append("w:" + tok)
                units.extend("g:" + g for g in char_ngrams(tok))
        self._add_units(units)

    def token_units(self, token: str) -> list[int]:
        ids = []
        word = self.vocab.get("w:" + token)
        if word is not None:
            ids.append(word)
        ids.extend(self.vocab[u] for u in ("g:" + g for g in char_ngrams(token)) if u in self.vocab)
        return ids or [self.vocab[UNK]]

    def _pooling_weights(self, texts: Sequence[str]):
        """Sparse pooling matrix as (row, unit, weight) triplets."""
        rows, units, weights = [], [], []
        for i, text in enumerate(texts):
            tokens = self.tokenize(text)
            if not tokens:
                raise EmptyInputError(f"text {text!r} has no tokens")
            for tok in tokens:
                ids = self.token_units(tok)
                w = 1.0 / len(tokens)
                rows.extend([i] * len(ids))
                units.extend(ids)
                weights.extend([w] * len(ids))
        return np.array(rows), np.array(units), np.array(weights)

    # computation

    def _forward(self, texts: Sequence[str], mask=None):
        rows, units, weights = self._pooling_weights(texts)
        pooled = np.zeros((len(texts), self.dim))
        np.add.at(pooled, rows, weights[:, None] * self.embedding[units])
        hidden = pooled if mask is None else pooled * mask
        out = hidden @ self.head_weight.T + self.head_bias
        return out, (rows, units, weights, hidden)

    def _dropout_mask(self, n: int) -> np.ndarray | None:
        if self.dropout <= 0.0:
            return None
        keep = self._dropout_rng.random((n, self.dim)) >= self.dropout
        return keep / (1.0 - self.dropout)

    def forward(self, text: str, mode: str = "eval") -> np.ndarray:
        if mode not in ("eval", "train"):
            raise ValueError(f"mode must be 'eval' or 'train', got {mode!r}")
        mask = self._dropout_mask(1) if mode == "train" else None
        out, _ = self._forward([text], mask)
        return out[0]

    def predict(self, texts: Sequence[str]) -> np.ndarray:
        out, _ = self._forward(list(texts))
        return out

    def loss_and_grads(self, texts: Sequence[str], targets, objective: str, mask=None):
        """Batch loss and analytic gradients for every parameter group."""
        out, (rows, units, weights, hidden) = self._forward(texts, mask)
        loss, d_out = objective_loss(out, targets, objective)
        grads = {
            "head_weight": d_out.T @ hidden,
            "head_bias": d_out.sum(axis=0),
        }
        d_pooled = d_out @ self.head_weight
        if mask is not None:
            d_pooled = d_pooled * mask
        d_emb = np.zeros_like(self.embedding)
        np.add.at(d_emb, units, weights[:, None] * d_pooled[rows])
        grads["embedding"] = d_emb
        return loss, grads

    def loss(self, texts: Sequence[str], targets, objective: str) -> float:
        out = self.predict(texts)
        return objective_loss(out, targets, objective)[0]

    def train_step(self, texts: Sequence[str], targets, objective: str, learning_rate: float) -> float:
        """One plain gradient-descent update; returns the pre-update batch loss."""
        mask = self._dropout_mask(len(texts))
        loss, grads = self.loss_and_grads(texts, targets, objective, mask)
        if not math.isfinite(loss):
            raise DivergenceError(f"non-finite training loss {loss}")
        for name, param in self.parameters().items():
            param -= learning_rate * grads[name]
        return loss

    # serialization

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "dim": self.dim,
            "dropout": self.dropout,
            "max_length": self.max_length,
            "seed": self.seed,
            "init_scale": self.init_scale,
            "vocab": sorted(self.vocab, key=self.vocab.__getitem__),
            "embedding": self.embedding.tolist(),
            "head_weight": self.head_weight.tolist(),
            "head_bias": self.head_bias.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ReferenceEncoder":
        head_weight = np.array(data["head_weight"], dtype=np.float64)
        enc = cls(n_outputs=head_weight.shape[0], dim=data["dim"], dropout=data["dropout"],
                  max_length=data["max_length"], seed=data["seed"], init_scale=data["init_scale"])
        enc.vocab = {u: i for i, u in enumerate(data["vocab"])}
        enc.embedding = np.array(data["embedding"], dtype=np.float64).reshape(len(enc.vocab), enc.dim)
        enc.head_weight = head_weight
        enc.head_bias = np.array(data["head_bias"], dtype=np.float64)
        return enc


# --- module-level operations ---------------------------------------------------

def forward(backend: EncoderBackend, text: str, mode: str = "eval") -> np.ndarray:
    return backend.forward(text, mode)


def train_step(backend: EncoderBackend, batch, objective: str, config: TrainConfig) -> float:
    texts, targets = batch
    if len(texts) == 0:
        raise ValueError("empty batch")
    return backend.train_step(list(texts), targets, objective, config.learning_rate)


@dataclass
class FitResult:
    curve: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = math.inf
    initial_val_loss: float = math.nan
    stopped_early: bool = False


def fit(backend: EncoderBackend, train_set, val_set, objective: str, config: TrainConfig) -> FitResult:
    """Mini-batch training with early stopping on validation loss.

    ``train_set`` and ``val_set`` are ``(texts, targets)`` pairs. Training
    stops once validation loss has not improved for ``config.patience``
    consecutive epochs; the backend is left holding the parameters of the
    best validation epoch.
    """
    train_texts, train_targets = list(train_set[0]), np.asarray(train_set[1])
    val_texts, val_targets = list(val_set[0]), np.asarray(val_set[1])
    if not train_texts or not val_texts:
        raise ValueError("training and validation sets must be non-empty")
    if len(train_texts) != len(train_targets) or len(val_texts) != len(val_targets):
        raise ValueError("texts and targets differ in length")
    if objective not in OBJECTIVES:
        raise ValueError(f"unknown objective {objective!r}")

    backend.max_length = config.max_length
    backend.dropout = config.dropout
    backend.prepare(train_texts)
    backend.reseed(config.seed)
    rng = np.random.default_rng(config.seed)

    result = FitResult(initial_val_loss=backend.loss(val_texts, val_targets, objective))
    best_state = backend.get_state()
    stale = 0
    n = len(train_texts)
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(n)
        losses, sizes = [], []
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            batch = ([train_texts[i] for i in idx], train_targets[idx])
            try:
                losses.append(train_step(backend, batch, objective, config))
            except DivergenceError as exc:
                raise DivergenceError(f"epoch {epoch}: {exc}") from None
            sizes.append(len(idx))
        train_loss = float(np.average(losses, weights=sizes))
        val_loss = backend.loss(val_texts, val_targets, objective)
        if not math.isfinite(val_loss):
            raise DivergenceError(f"epoch {epoch}: non-finite validation loss {val_loss}")
        result.curve.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss})
        if val_loss < result.best_val_loss:
            result.best_val_loss = val_loss
            result.best_epoch = epoch
            best_state = backend.get_state()
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                result.stopped_early = True
                break
    backend.set_state(best_state)
    logger.debug("fit stopped at epoch %d, best epoch %d (val %.4g)",
                 result.curve[-1]["epoch"], result.best_epoch, result.best_val_loss)
    return result


BACKENDS = {ReferenceEncoder.kind: ReferenceEncoder}


def backend_from_dict(data: dict) -> EncoderBackend:
    kind = data.get("kind")
    if kind == "transformer" and kind not in BACKENDS:
        from . import transformer  # noqa: F401  registers itself
    if kind not in BACKENDS:
        raise ValueError(f"unknown backend kind {kind!r}")
    return BACKENDS[kind].from_dict(data)
