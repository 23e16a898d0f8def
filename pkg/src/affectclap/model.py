"""Contrastive training core: projections, similarity, loss, optimizer.

Two learnable linear maps project fixed audio/text features into a joint
embedding space; rows are L2-normalized so the temperature-scaled
similarity matrix used in training is the same cosine score used at
evaluation time. The symmetric cross-entropy loss treats the batch
diagonal as the correct pairs. Gradients are analytic (including through
the normalization and the temperature) and optimization is plain Adam,
all in float64 numpy, so training is deterministic given a seed.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    CorruptCheckpoint,
    DegenerateEmbedding,
    DimensionMismatch,
    FeaturizerMismatch,
    InsufficientPairs,
    NonFiniteLogits,
    NonFiniteLoss,
    VersionMismatch,
)

CHECKPOINT_FORMAT = "affect-clap/1"
TAU_INIT = 1.0 / 0.07
_PARAM_NAMES = ("W_a", "b_a", "W_t", "b_t", "log_tau")


@dataclass(frozen=True)
class ModelConfig:
    audio_dim: int = 68
    text_dim: int = 48
    embed_dim: int = 32
    featurizer_hash: str = ""
    tau_learnable: bool = True
    tau_max: float = 100.0


@dataclass
class ClapModel:
    config: ModelConfig
    W_a: np.ndarray
    b_a: np.ndarray
    W_t: np.ndarray
    b_t: np.ndarray
    log_tau: float
    seed: int = 0

    @property
    def tau(self) -> float:
        return math.exp(self.log_tau)

    def params(self) -> dict[str, np.ndarray]:
        return {
            "W_a": self.W_a, "b_a": self.b_a,
            "W_t": self.W_t, "b_t": self.b_t,
            "log_tau": np.float64(self.log_tau),
        }

    def with_params(self, params: dict[str, np.ndarray]) -> "ClapModel":
        return ClapModel(
            config=self.config,
            W_a=np.array(params["W_a"]), b_a=np.array(params["b_a"]),
            W_t=np.array(params["W_t"]), b_t=np.array(params["b_t"]),
            log_tau=float(params["log_tau"]), seed=self.seed,
        )


@dataclass(frozen=True)
class EmbeddingBatch:
    E_a: np.ndarray
    E_t: np.ndarray

    @property
    def size(self) -> int:
        return self.E_a.shape[0]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.0001
    batch_size: int = 128
    epochs: int = 30
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0 or self.epochs < 0:
            raise ValueError("learning rate must be positive, epochs >= 0")
        if self.batch_size < 2:
            raise ValueError("batch size must be at least 2")


@dataclass(frozen=True)
class TrainingPair:
    """One (audio clip, rendered prompt) pair with precomputed features."""

    clip_id: str
    kind: str
    text: str
    audio_vec: np.ndarray
    text_vec: np.ndarray


@dataclass(frozen=True)
class BatchStats:
    batch_index: int
    epoch: int
    loss: float
    l_text: float
    l_audio: float
    tau: float


def init_model(config: ModelConfig, seed: int = 0) -> ClapModel:
    """Random projections scaled by fan-in; temperature starts at 1/0.07."""
    rng = np.random.default_rng(seed)
    d = config.embed_dim
    W_a = rng.standard_normal((d, config.audio_dim)) / math.sqrt(
        config.audio_dim)
    W_t = rng.standard_normal((d, config.text_dim)) / math.sqrt(
        config.text_dim)
    return ClapModel(
        config=config,
        W_a=W_a, b_a=np.zeros(d), W_t=W_t, b_t=np.zeros(d),
        log_tau=math.log(TAU_INIT), seed=seed,
    )


# -- forward ---------------------------------------------------------------

def _project_side(W: np.ndarray, b: np.ndarray, X: np.ndarray,
                  side: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Linear map, then row L2-normalization; returns (E, Z, norms)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != W.shape[1]:
        raise DimensionMismatch(
            f"{side} batch has dimension {X.shape[1]}, model expects "
            f"{W.shape[1]}"
        )
    Z = X @ W.T + b
    norms = np.linalg.norm(Z, axis=1)
    if np.any(norms < 1e-12):
        raise DegenerateEmbedding(
            f"{side} projection produced a near-zero vector"
        )
    return Z / norms[:, None], Z, norms


def embed_audio(model: ClapModel, X_a: np.ndarray) -> np.ndarray:
    """Unit-norm audio embeddings for a batch of feature vectors."""
    return _project_side(model.W_a, model.b_a, X_a, "audio")[0]


def embed_text(model: ClapModel, X_t: np.ndarray) -> np.ndarray:
    """Unit-norm text embeddings for a batch of feature vectors."""
    return _project_side(model.W_t, model.b_t, X_t, "text")[0]


def project(model: ClapModel, X_a: np.ndarray,
            X_t: np.ndarray) -> EmbeddingBatch:
    """Project paired audio/text features into the joint space."""
    E_a = embed_audio(model, X_a)
    E_t = embed_text(model, X_t)
    if E_a.shape[0] != E_t.shape[0]:
        raise DimensionMismatch(
            f"audio batch ({E_a.shape[0]}) and text batch ({E_t.shape[0]}) "
            "differ in size"
        )
    return EmbeddingBatch(E_a=E_a, E_t=E_t)


def similarity(model: ClapModel, batch: EmbeddingBatch) -> np.ndarray:
    """Temperature-scaled similarity: C[i, j] = tau * (E_t[i] . E_a[j])."""
    return model.tau * (batch.E_t @ batch.E_a.T)


def _log_softmax(C: np.ndarray, axis: int) -> np.ndarray:
    m = C.max(axis=axis, keepdims=True)
    shifted = C - m
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def contrastive_loss(C: np.ndarray) -> tuple[float, float, float]:
    """Symmetric cross-entropy over the similarity matrix.

    Returns (loss, l_text, l_audio): the text term is the mean negative
    log-softmax of the diagonal along rows, the audio term along columns,
    and the loss their average. Non-negative, minimized when each row and
    column puts all its mass on the diagonal.
    """
    C = np.asarray(C, dtype=np.float64)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise DimensionMismatch(f"similarity matrix must be square, "
                                f"got {C.shape}")
    if C.shape[0] < 2:
        raise DimensionMismatch("contrastive loss needs a batch of >= 2")
    if not np.all(np.isfinite(C)):
        raise NonFiniteLogits("similarity matrix contains non-finite values")
    l_text = float(-np.mean(np.diag(_log_softmax(C, axis=1))))
    l_audio = float(-np.mean(np.diag(_log_softmax(C, axis=0))))
    return 0.5 * (l_text + l_audio), l_text, l_audio


# -- gradients -------------------------------------------------------------

def _softmax(C: np.ndarray, axis: int) -> np.ndarray:
    e = np.exp(C - C.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def _backprop_normalization(dE: np.ndarray, E: np.ndarray,
                            norms: np.ndarray) -> np.ndarray:
    # e = z/|z|  =>  dz = (g - (g.e) e) / |z|
    return (dE - (dE * E).sum(axis=1, keepdims=True) * E) / norms[:, None]


def loss_gradients(
    model: ClapModel, X_a: np.ndarray, X_t: np.ndarray
) -> tuple[dict[str, np.ndarray], tuple[float, float, float]]:
    """Analytic gradients of the symmetric loss for one batch.

    Returns (gradients keyed like params(), (loss, l_text, l_audio)). The
    temperature gradient is zero when the config freezes it.
    """
    X_a = np.atleast_2d(np.asarray(X_a, dtype=np.float64))
    X_t = np.atleast_2d(np.asarray(X_t, dtype=np.float64))
    E_a, Z_a, n_a = _project_side(model.W_a, model.b_a, X_a, "audio")
    E_t, Z_t, n_t = _project_side(model.W_t, model.b_t, X_t, "text")
    tau = model.tau
    C = tau * (E_t @ E_a.T)
    loss, l_text, l_audio = contrastive_loss(C)

    N = C.shape[0]
    P = _softmax(C, axis=1)
    Q = _softmax(C, axis=0)
    eye = np.eye(N)
    G = ((P - eye) + (Q - eye)) / (2.0 * N)

    dE_t = tau * (G @ E_a)
    dE_a = tau * (G.T @ E_t)
    dZ_t = _backprop_normalization(dE_t, E_t, n_t)
    dZ_a = _backprop_normalization(dE_a, E_a, n_a)

    grads = {
        "W_a": dZ_a.T @ X_a,
        "b_a": dZ_a.sum(axis=0),
        "W_t": dZ_t.T @ X_t,
        "b_t": dZ_t.sum(axis=0),
        "log_tau": np.float64(
            float(np.sum(G * C)) if model.config.tau_learnable else 0.0
        ),
    }
    return grads, (loss, l_text, l_audio)


# -- Adam ------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(np.asarray(v)) for k, v in params.items()},
            v={k: np.zeros_like(np.asarray(v)) for k, v in params.items()},
            t=0,
        )


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    cfg: TrainConfig,
    tau_max: float | None = None,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update; pure (inputs are not mutated)."""
    t = state.t + 1
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        m = cfg.beta1 * state.m[name] + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * state.v[name] + (1.0 - cfg.beta2) * g * g
        m_hat = m / (1.0 - cfg.beta1 ** t)
        v_hat = v / (1.0 - cfg.beta2 ** t)
        new_params[name] = p - cfg.learning_rate * m_hat / (
            np.sqrt(v_hat) + cfg.eps)
        new_m[name], new_v[name] = m, v
    if tau_max is not None and "log_tau" in new_params:
        new_params["log_tau"] = np.minimum(
            new_params["log_tau"], math.log(tau_max))
    return new_params, AdamState(m=new_m, v=new_v, t=t)


# -- training --------------------------------------------------------------

def _make_batches(pairs: list[TrainingPair], batch_size: int,
                  rng: np.random.Generator) -> list[list[int]]:
    """Shuffle, then greedily fill batches with unique clip ids.

    The augmented pairs of one clip are kept out of each other's batches
    (they would be false negatives on the off-diagonal); the final short
    batch is dropped.
    """
    queue = list(rng.permutation(len(pairs)))
    batches = []
    while len(queue) >= batch_size:
        batch, skipped, seen = [], [], set()
        for i in queue:
            if len(batch) == batch_size:
                skipped.append(i)
                continue
            cid = pairs[i].clip_id
            if cid in seen:
                skipped.append(i)
            else:
                seen.add(cid)
                batch.append(i)
        if len(batch) < batch_size:
            break
        batches.append(batch)
        queue = skipped
    return batches


def train(
    pairs: list[TrainingPair],
    cfg: TrainConfig,
    model_init: ClapModel,
) -> tuple[ClapModel, list[BatchStats]]:
    """Seeded mini-batch training of the two projections (and tau).

    Shuffles every epoch, keeps at most one pair per clip id per batch,
    drops the final short batch, and aborts on a non-finite loss.
    """
    if len(pairs) < cfg.batch_size:
        raise InsufficientPairs(
            f"{len(pairs)} pairs but batch size is {cfg.batch_size}"
        )
    for p in pairs:
        if (len(p.audio_vec) != model_init.config.audio_dim
                or len(p.text_vec) != model_init.config.text_dim):
            raise DimensionMismatch(
                f"pair for clip {p.clip_id!r} has feature dims "
                f"({len(p.audio_vec)}, {len(p.text_vec)}); model expects "
                f"({model_init.config.audio_dim}, "
                f"{model_init.config.text_dim})"
            )

    model = copy.deepcopy(model_init)
    params = model.params()
    state = AdamState.zeros_like(params)
    rng = np.random.default_rng(cfg.seed)
    history: list[BatchStats] = []
    batch_index = 0

    for epoch in range(cfg.epochs):
        for batch in _make_batches(pairs, cfg.batch_size, rng):
            X_a = np.stack([pairs[i].audio_vec for i in batch])
            X_t = np.stack([pairs[i].text_vec for i in batch])
            current = model.with_params(params)
            grads, (loss, l_text, l_audio) = loss_gradients(current, X_a, X_t)
            if not math.isfinite(loss):
                raise NonFiniteLoss(
                    f"loss became non-finite at epoch {epoch}, "
                    f"batch {batch_index} (tau={current.tau:.4g})"
                )
            params, state = adam_step(params, grads, state, cfg,
                                      tau_max=model.config.tau_max)
            history.append(BatchStats(
                batch_index=batch_index, epoch=epoch, loss=loss,
                l_text=l_text, l_audio=l_audio,
                tau=float(np.exp(params["log_tau"])),
            ))
            batch_index += 1

    return model.with_params(params), history


def history_to_csv(history: list[BatchStats]) -> str:
    lines = ["batch_index,epoch,loss,l_text,l_audio,tau"]
    for h in history:
        lines.append(f"{h.batch_index},{h.epoch},{h.loss!r},{h.l_text!r},"
                     f"{h.l_audio!r},{h.tau!r}")
    return "\n".join(lines) + "\n"


# -- checkpointing ---------------------------------------------------------

def _checkpoint_document(model: ClapModel) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "config": {
            "audio_dim": model.config.audio_dim,
            "text_dim": model.config.text_dim,
            "embed_dim": model.config.embed_dim,
            "featurizer_hash": model.config.featurizer_hash,
            "tau_learnable": model.config.tau_learnable,
            "tau_max": model.config.tau_max,
        },
        "W_a": model.W_a.tolist(),
        "b_a": model.b_a.tolist(),
        "W_t": model.W_t.tolist(),
        "b_t": model.b_t.tolist(),
        "log_tau": model.log_tau,
        "featurizer_hash": model.config.featurizer_hash,
        "seed": model.seed,
    }


def model_hash(model: ClapModel) -> str:
    """Stable content hash of a model, used for integrity checks."""
    blob = json.dumps(_checkpoint_document(model), sort_keys=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def save_checkpoint(model: ClapModel, path: str | Path) -> None:
    """Versioned JSON checkpoint; floats round-trip bit-exactly."""
    doc = _checkpoint_document(model)
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n",
                          encoding="utf-8")


def load_checkpoint(path: str | Path,
                    expected_featurizer_hash: str | None = None) -> ClapModel:
    """Load a checkpoint, verifying format and featurizer compatibility."""
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"no such checkpoint: {p}")
    try:
        doc = json.loads(p.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CorruptCheckpoint(f"{p}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise VersionMismatch(
            f"{p}: format {doc.get('format')!r}, expected "
            f"{CHECKPOINT_FORMAT!r}"
        )
    try:
        cfg = ModelConfig(
            audio_dim=int(doc["config"]["audio_dim"]),
            text_dim=int(doc["config"]["text_dim"]),
            embed_dim=int(doc["config"]["embed_dim"]),
            featurizer_hash=str(doc["config"]["featurizer_hash"]),
            tau_learnable=bool(doc["config"]["tau_learnable"]),
            tau_max=float(doc["config"]["tau_max"]),
        )
        model = ClapModel(
            config=cfg,
            W_a=np.array(doc["W_a"], dtype=np.float64),
            b_a=np.array(doc["b_a"], dtype=np.float64),
            W_t=np.array(doc["W_t"], dtype=np.float64),
            b_t=np.array(doc["b_t"], dtype=np.float64),
            log_tau=float(doc["log_tau"]),
            seed=int(doc["seed"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptCheckpoint(f"{p}: {exc}") from exc
    d = cfg.embed_dim
    if (model.W_a.shape != (d, cfg.audio_dim)
            or model.W_t.shape != (d, cfg.text_dim)
            or model.b_a.shape != (d,) or model.b_t.shape != (d,)):
        raise CorruptCheckpoint(f"{p}: parameter shapes do not match config")
    if (expected_featurizer_hash is not None
            and cfg.featurizer_hash != expected_featurizer_hash):
        raise FeaturizerMismatch(
            f"{p}: checkpoint featurizer {cfg.featurizer_hash!r} != "
            f"current {expected_featurizer_hash!r}"
        )
    return model
