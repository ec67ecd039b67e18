"""Pretrained transformer encoders behind the :class:`EncoderBackend` interface.

Tokens come from the model's own tokenizer; the sentence vector is the mean of
the last hidden states over non-padding positions, followed by dropout and a
linear head. Training uses AdamW on all weights. Requires the ``transformers``
extra (torch and transformers), imported on first use.
"""

from __future__ import annotations

import base64
import copy
import io
import logging
from typing import Sequence

import numpy as np

from .encoder import BACKENDS, CROSS_ENTROPY, MSE, DivergenceError, EmptyInputError

logger = logging.getLogger(__name__)

DEFAULT_LEARNING_RATE = 2e-5


def _torch():
    try:
        import torch
        import transformers
    except ImportError as exc:  # pragma: no cover - depends on the environment
        raise ImportError("the transformer backend needs: pip install 'lexisent[transformers]'") from exc
    return torch, transformers


class TransformerEncoder:
    """Mean-pooled pretrained encoder with a linear head.

    ``model`` is a Hugging Face hub id or a local directory holding both the
    model and its tokenizer.
    """

    kind = "transformer"

    def __init__(self, model: str, n_outputs: int = 1, dropout: float = 0.2, max_length: int = 10,
                 seed: int = 0):
        torch, transformers = _torch()
        self.model_name = model
        self.dropout = dropout
        self.max_length = max_length
        self.seed = seed
        self.tokenizer = transformers.AutoTokenizer.from_pretrained(model)
        torch.manual_seed(seed)
        self.encoder = transformers.AutoModel.from_pretrained(model)
        self.hidden = self.encoder.config.hidden_size
        self.drop = torch.nn.Dropout(dropout)
        self.generator = torch.Generator().manual_seed(seed)
        self.reset_head(n_outputs)

    # -- parameters --

    def reset_head(self, n_outputs: int) -> None:
        torch, _ = _torch()
        self.n_outputs = n_outputs
        torch.manual_seed(self.seed)
        self.head = torch.nn.Linear(self.hidden, n_outputs).double()
        self._optimizer = None

    def reseed(self, seed: int) -> None:
        torch, _ = _torch()
        self.seed = seed
        torch.manual_seed(seed)
        self.generator = torch.Generator().manual_seed(seed)

    def _modules(self):
        return (self.encoder, self.head)

    def get_state(self):
        return [copy.deepcopy(m.state_dict()) for m in self._modules()]

    def set_state(self, state) -> None:
        for module, sd in zip(self._modules(), state):
            module.load_state_dict(sd)
        self._optimizer = None

    # -- forward --

    def prepare(self, texts: Sequence[str]) -> None:
        """Nothing to build: the tokenizer's vocabulary is fixed."""

    def _encode(self, texts: Sequence[str], train: bool):
        torch, _ = _torch()
        if any(not t.strip() for t in texts):
            raise EmptyInputError("empty text")
        batch = self.tokenizer(list(texts), padding=True, truncation=True, max_length=self.max_length,
                               return_tensors="pt")
        for m in self._modules():
            m.train(train)
        self.drop.train(train)
        hidden = self.encoder(**batch).last_hidden_state.double()
        mask = batch["attention_mask"].unsqueeze(-1).double()
        pooled = (hidden * mask).sum(dim=1) / mask.sum(dim=1).clamp(min=1.0)
        return self.head(self.drop(pooled))

    def predict(self, texts: Sequence[str]) -> np.ndarray:
        torch, _ = _torch()
        if not texts:
            return np.zeros((0, self.n_outputs))
        with torch.no_grad():
            return self._encode(texts, train=False).numpy().astype(np.float64)

    def forward(self, text: str, mode: str = "eval") -> np.ndarray:
        torch, _ = _torch()
        with torch.set_grad_enabled(False):
            return self._encode([text], train=(mode == "train"))[0].numpy().astype(np.float64)

    # -- training --

    @staticmethod
    def _loss(outputs, targets, objective):
        torch, _ = _torch()
        if objective == MSE:
            t = torch.as_tensor(np.asarray(targets, dtype=np.float64)).reshape(-1)
            return torch.nn.functional.mse_loss(outputs[:, 0], t)
        if objective == CROSS_ENTROPY:
            y = torch.as_tensor(np.asarray(targets, dtype=np.int64)).reshape(-1)
            return torch.nn.functional.cross_entropy(outputs, y)
        raise ValueError(f"unknown objective {objective!r}")

    def loss(self, texts: Sequence[str], targets, objective: str) -> float:
        torch, _ = _torch()
        with torch.no_grad():
            return float(self._loss(self._encode(texts, train=False), targets, objective))

    def train_step(self, texts: Sequence[str], targets, objective: str, learning_rate: float) -> float:
        torch, _ = _torch()
        if self._optimizer is None or self._optimizer.param_groups[0]["lr"] != learning_rate:
            params = [p for m in self._modules() for p in m.parameters()]
            self._optimizer = torch.optim.AdamW(params, lr=learning_rate)
        loss = self._loss(self._encode(texts, train=True), targets, objective)
        value = float(loss.detach())
        if not np.isfinite(value):
            raise DivergenceError(f"non-finite training loss {value}")
        self._optimizer.zero_grad()
        loss.backward()
        self._optimizer.step()
        return value

    # -- serialization --

    def to_dict(self) -> dict:
        torch, _ = _torch()
        buf = io.BytesIO()
        torch.save(self.get_state(), buf)
        return {
            "kind": self.kind,
            "model": self.model_name,
            "n_outputs": self.n_outputs,
            "dropout": self.dropout,
            "max_length": self.max_length,
            "seed": self.seed,
            "weights": base64.b64encode(buf.getvalue()).decode("ascii"),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TransformerEncoder":
        torch, _ = _torch()
        enc = cls(data["model"], data["n_outputs"], data["dropout"], data["max_length"], data["seed"])
        state = torch.load(io.BytesIO(base64.b64decode(data["weights"])), weights_only=True)
        enc.set_state(state)
        return enc


BACKENDS[TransformerEncoder.kind] = TransformerEncoder
