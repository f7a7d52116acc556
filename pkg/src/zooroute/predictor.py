"""Online multi-label satisfaction predictor.

A linear-logistic head per model over a pluggable feature extractor. The
default extractor hashes tokens into a fixed number of buckets, which keeps
the predictor self-contained; dense feature vectors pass through unchanged.
Training is strictly one labeled sample per exploration step.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.special import expit

from .core import RequestEvent
from .ioutil import atomic_write_text

# Probabilities are clamped away from {0, 1} before logs so the loss stays finite.
PROB_EPS = 1e-12

CHECKPOINT_SCHEMA = 1

_TOKEN_RE = re.compile(r"\w+")


@dataclass(frozen=True)
class LearningRateSchedule:
    """Step-size rule for the online updates.

    ``inverse_decay`` is the practical default: eta_k = eta0 / (1 + k / k0).
    ``pl_schedule`` is eta_k = min(2 / (mu * (k + 1)), 1 / l_smooth) for
    strongly-curved objectives with known constants; ``constant`` is eta0.
    """

    kind: str = "inverse_decay"
    eta0: float = 0.05
    k0: float = 200.0
    mu: float = 0.0
    l_smooth: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in ("inverse_decay", "pl_schedule", "constant"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "pl_schedule":
            if not (self.mu > 0 and self.l_smooth > 0):
                raise ValueError("pl_schedule needs mu > 0 and l_smooth > 0")
        elif not (self.eta0 > 0 and self.k0 > 0):
            raise ValueError("eta0 and k0 must be positive")

    def rate(self, k: int) -> float:
        """Step size for the k-th update, k >= 1."""
        if k < 1:
            raise ValueError("step index k is 1-based")
        if self.kind == "constant":
            return self.eta0
        if self.kind == "inverse_decay":
            return self.eta0 / (1.0 + k / self.k0)
        return min(2.0 / (self.mu * (k + 1)), 1.0 / self.l_smooth)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "eta0": self.eta0,
            "k0": self.k0,
            "mu": self.mu,
            "l_smooth": self.l_smooth,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LearningRateSchedule":
        return cls(**d)


@dataclass(frozen=True)
class FeatureExtractor:
    """Deterministic request featurizer.

    ``hashed_tokens`` buckets lowercased word tokens with a keyed hash and
    L2-normalizes the counts (so the output norm is at most 1);
    ``passthrough`` returns the event's stored feature vector unchanged.
    """

    dim: int
    kind: str = "hashed_tokens"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise ValueError("feature dimension must be positive")
        if self.kind not in ("hashed_tokens", "passthrough"):
            raise ValueError(f"unknown extractor kind {self.kind!r}")

    def _bucket(self, token: str) -> int:
        key = self.seed.to_bytes(8, "little", signed=True)
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8, key=key)
        return int.from_bytes(digest.digest(), "little") % self.dim

    def token_counts(self, text: str) -> np.ndarray:
        """Raw bucket counts for ``text``, before normalization."""
        counts = np.zeros(self.dim)
        for token in _TOKEN_RE.findall(text.lower()):
            counts[self._bucket(token)] += 1.0
        return counts

    def featurize(self, event: RequestEvent) -> np.ndarray:
        if self.kind == "passthrough":
            if event.features is None:
                raise ValueError("passthrough extractor needs a feature vector")
            if event.features.shape != (self.dim,):
                raise ValueError(
                    f"expected feature dimension {self.dim}, "
                    f"got {event.features.shape}"
                )
            return event.features
        if event.text is None:
            raise ValueError("hashed_tokens extractor needs request text")
        counts = self.token_counts(event.text)
        norm = np.linalg.norm(counts)
        return counts / norm if norm > 0 else counts

    def to_dict(self) -> dict:
        return {"dim": self.dim, "kind": self.kind, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureExtractor":
        return cls(**d)


@dataclass
class PredictorState:
    """Parameters of the per-model logistic heads.

    ``z`` has shape (M, d+1); the trailing column is the bias, handled as an
    appended constant-1 feature so the regularizer covers it too. ``k``
    counts completed updates.
    """

    z: np.ndarray
    k: int = 0
    mu: float = 0.0
    schedule: LearningRateSchedule = field(default_factory=LearningRateSchedule)

    def __post_init__(self) -> None:
        self.z = np.asarray(self.z, dtype=float)
        if self.z.ndim != 2 or self.z.shape[1] < 2:
            raise ValueError("z must have shape (n_models, dim + 1)")
        if not np.isfinite(self.z).all():
            raise ValueError("predictor parameters must be finite")
        if self.k < 0 or self.mu < 0:
            raise ValueError("k and mu must be nonnegative")

    @classmethod
    def initial(
        cls,
        n_models: int,
        dim: int,
        mu: float = 0.0,
        schedule: Optional[LearningRateSchedule] = None,
    ) -> "PredictorState":
        """Zero-initialized state: every prediction starts at exactly 0.5."""
        return cls(
            z=np.zeros((n_models, dim + 1)),
            mu=mu,
            schedule=schedule or LearningRateSchedule(),
        )

    @property
    def n_models(self) -> int:
        return self.z.shape[0]

    @property
    def dim(self) -> int:
        return self.z.shape[1] - 1

    def copy(self) -> "PredictorState":
        return PredictorState(z=self.z.copy(), k=self.k, mu=self.mu, schedule=self.schedule)


def _augment(x: np.ndarray, dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (dim,):
        raise ValueError(f"expected feature dimension {dim}, got {x.shape}")
    if not np.isfinite(x).all():
        raise ValueError("features must be finite")
    return np.append(x, 1.0)


def predict(state: PredictorState, x: np.ndarray) -> np.ndarray:
    """Per-model satisfaction probabilities sigmoid(z_m . [x; 1])."""
    return expit(state.z @ _augment(x, state.dim))


def loss(state: PredictorState, x: np.ndarray, labels: np.ndarray) -> float:
    """Regularized mean cross entropy of the per-model heads on one sample."""
    labels = np.asarray(labels, dtype=float)
    s_hat = np.clip(predict(state, x), PROB_EPS, 1.0 - PROB_EPS)
    ce = -(labels * np.log(s_hat) + (1.0 - labels) * np.log(1.0 - s_hat)).mean()
    return float(ce + 0.5 * state.mu * (state.z**2).sum())


def gradient(state: PredictorState, x: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Gradient of :func:`loss` w.r.t. z: (1/M)(s_hat - s) outer [x;1] + mu z."""
    labels = np.asarray(labels, dtype=float)
    u = _augment(x, state.dim)
    s_hat = expit(state.z @ u)
    return np.outer(s_hat - labels, u) / state.n_models + state.mu * state.z


def sgd_step(state: PredictorState, x: np.ndarray, labels: np.ndarray) -> PredictorState:
    """One stochastic update on a fully-labeled sample; returns a new state."""
    labels = np.asarray(labels)
    if labels.shape != (state.n_models,):
        raise ValueError("labels must cover every model")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be 0/1 bits")
    grad = gradient(state, x, labels)
    if not np.isfinite(grad).all():
        raise FloatingPointError("non-finite gradient in predictor update")
    eta = state.schedule.rate(state.k + 1)
    return PredictorState(
        z=state.z - eta * grad, k=state.k + 1, mu=state.mu, schedule=state.schedule
    )


def save_checkpoint(state: PredictorState, path: str | Path) -> None:
    """Write a versioned JSON checkpoint (atomic, bit-exact round trip)."""
    payload = {
        "schema_version": CHECKPOINT_SCHEMA,
        "dim": state.dim,
        "m": state.n_models,
        "mu": state.mu,
        "k": state.k,
        "schedule": state.schedule.to_dict(),
        "z": state.z.reshape(-1).tolist(),
    }
    atomic_write_text(Path(path), json.dumps(payload))


def load_checkpoint(path: str | Path) -> PredictorState:
    payload = json.loads(Path(path).read_text())
    if payload.get("schema_version") != CHECKPOINT_SCHEMA:
        raise ValueError(f"unsupported checkpoint schema: {payload.get('schema_version')}")
    z = np.array(payload["z"], dtype=float).reshape(payload["m"], payload["dim"] + 1)
    return PredictorState(
        z=z,
        k=payload["k"],
        mu=payload["mu"],
        schedule=LearningRateSchedule.from_dict(payload["schedule"]),
    )
