"""Evaluation protocols: zero-shot, leave-one-out (+finetune), retrieval.

Zero-shot classification scores a clip against candidate label texts by
cosine similarity in the joint space. Leave-one-out trains on every
dataset except one and evaluates zero-shot on the held-out one, with an
instrumented assertion that no held-out clip leaks into training.
Finetuning freezes the contrastive model as a feature extractor and
trains a three-layer classifier head on top. Retrieval ranks a corpus by
cosine similarity to a query text and is scored by precision@K against
the clips' true rendered prompts.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import PreparedClip, build_training_pairs
from .errors import (
    EmptyCandidates,
    EmptyCorpus,
    FeaturizerMismatch,
    InsufficientData,
    LeakageDetected,
    MissingGroundTruth,
    UnknownDataset,
)
from .featurizers import FeaturizerConfig, encode_text
from .model import (
    ClapModel,
    ModelConfig,
    TrainConfig,
    embed_audio,
    embed_text,
    init_model,
    model_hash,
    train,
)
from .prompting import (
    BIN_PHRASES,
    KIND_ORDER,
    BinThresholds,
    MissingPitch,
    PromptKind,
    PromptPolicy,
    normalize_label,
    render_prompt,
)

_ACOUSTIC_KINDS = tuple(k for k in KIND_ORDER if k is not PromptKind.CLASS)


@dataclass
class EvalReport:
    protocol: str
    accuracy: float
    per_class: dict[str, float]
    confusion: dict[str, dict[str, int]]
    supports: dict[str, int]
    precision_at_k: dict[str, dict[str, float]] | None = None
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "accuracy": self.accuracy,
            "per_class": self.per_class,
            "confusion": self.confusion,
            "supports": self.supports,
            "precision_at_k": self.precision_at_k,
            "metadata": self.metadata,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n",
            encoding="utf-8",
        )

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(
            protocol=d["protocol"],
            accuracy=d["accuracy"],
            per_class=d["per_class"],
            confusion=d["confusion"],
            supports=d["supports"],
            precision_at_k=d.get("precision_at_k"),
            metadata=d.get("metadata", {}),
        )

    @classmethod
    def load(cls, path: str | Path) -> "EvalReport":
        return cls.from_dict(json.loads(Path(path).read_text("utf-8")))


def _check_featurizer(model: ClapModel, cfg: FeaturizerConfig) -> None:
    if model.config.featurizer_hash and (
            model.config.featurizer_hash != cfg.config_hash()):
        raise FeaturizerMismatch(
            f"model was trained with featurizer {model.config.featurizer_hash!r}, "
            f"current configuration hashes to {cfg.config_hash()!r}"
        )


def _classification_report(protocol: str, truths: list[str],
                           preds: list[str], labels: list[str],
                           metadata: dict) -> EvalReport:
    confusion = {t: {p: 0 for p in labels} for t in sorted(set(truths))}
    for t, p in zip(truths, preds):
        confusion[t][p] = confusion[t].get(p, 0) + 1
    supports = {t: sum(row.values()) for t, row in confusion.items()}
    per_class = {
        t: (confusion[t].get(t, 0) / n if n else 0.0)
        for t, n in supports.items()
    }
    correct = sum(confusion[t].get(t, 0) for t in confusion)
    total = len(truths)
    return EvalReport(
        protocol=protocol,
        accuracy=correct / total if total else 0.0,
        per_class=per_class,
        confusion=confusion,
        supports=supports,
        metadata=metadata,
    )


# -- zero-shot ---------------------------------------------------------------

def zero_shot_classify(
    model: ClapModel,
    clips: list[PreparedClip],
    candidate_labels: list[str],
    template: str = "{label}",
    cfg: FeaturizerConfig | None = None,
) -> tuple[EvalReport, dict[str, str]]:
    """Predict each clip's label by cosine against candidate label texts.

    Candidates are sorted, so score ties resolve to the first label in
    sorted order. The default template is the bare class label.
    """
    cfg = cfg or FeaturizerConfig()
    _check_featurizer(model, cfg)
    labels = sorted({normalize_label(c) for c in candidate_labels})
    if not labels:
        raise EmptyCandidates("need at least one candidate label")

    text_vecs = np.stack([
        encode_text(template.format(label=label), cfg) for label in labels
    ])
    E_t = embed_text(model, text_vecs)
    E_a = embed_audio(model, np.stack([c.audio_vec for c in clips]))
    scores = E_a @ E_t.T
    pred_idx = scores.argmax(axis=1)

    truths = [normalize_label(c.emotion) for c in clips]
    preds = [labels[i] for i in pred_idx]
    predictions = {c.clip_id: p for c, p in zip(clips, preds)}
    metadata = {
        "checkpoint_hash": model_hash(model),
        "template": template,
        "candidates": labels,
        "seed": model.seed,
    }
    report = _classification_report("zero_shot", truths, preds, labels,
                                    metadata)
    return report, predictions


# -- leave-one-out -----------------------------------------------------------

def leave_one_out_run(
    datasets: dict[str, list[PreparedClip]],
    held_out: str,
    policy: PromptPolicy | None = None,
    train_cfg: TrainConfig | None = None,
    cfg: FeaturizerConfig | None = None,
    thresholds: BinThresholds | None = None,
    embed_dim: int = 32,
    template: str = "{label}",
) -> tuple[ClapModel, EvalReport]:
    """Train on every dataset except held_out, evaluate zero-shot on it.

    Candidates come from the held-out dataset's own class list; classes
    never seen in training are recorded in metadata (the zero-shot case).
    Any held-out clip id appearing in the training pairs aborts the run.
    """
    cfg = cfg or FeaturizerConfig()
    train_cfg = train_cfg or TrainConfig()
    if held_out not in datasets:
        raise UnknownDataset(
            f"{held_out!r} not among datasets {sorted(datasets)}"
        )
    held_clips = datasets[held_out]
    train_clips = [c for name, clips in sorted(datasets.items())
                   if name != held_out for c in clips]
    if not train_clips:
        raise UnknownDataset("no training datasets remain after holding out")

    held_ids = {c.clip_id for c in held_clips}
    pairs = build_training_pairs(train_clips, policy, thresholds, cfg)
    leaked = sorted(held_ids.intersection(p.clip_id for p in pairs))
    if leaked:
        raise LeakageDetected(
            f"held-out clip ids present in training pairs: {leaked[:5]}"
        )

    model_cfg = ModelConfig(
        audio_dim=cfg.audio_dim, text_dim=cfg.text_dim,
        embed_dim=embed_dim, featurizer_hash=cfg.config_hash(),
    )
    model, _ = train(pairs, train_cfg, init_model(model_cfg, train_cfg.seed))

    candidates = sorted({normalize_label(c.emotion) for c in held_clips})
    report, _ = zero_shot_classify(model, held_clips, candidates,
                                   template, cfg)
    training_labels = {normalize_label(c.emotion) for c in train_clips}
    report.protocol = "leave_one_out"
    report.metadata.update({
        "held_out": held_out,
        "training_datasets": sorted(n for n in datasets if n != held_out),
        "unseen_candidates": sorted(
            c for c in candidates if c not in training_labels),
        "policy": _policy_name(policy),
        "train_seed": train_cfg.seed,
    })
    return model, report


def _policy_name(policy: PromptPolicy | None) -> str:
    policy = policy or PromptPolicy()
    if policy.kinds == frozenset(KIND_ORDER):
        return "augment"
    return "+".join(k.value for k in KIND_ORDER if k in policy.kinds)


# -- finetuning ---------------------------------------------------------------

@dataclass(frozen=True)
class HeadConfig:
    hidden1: int | None = None      # defaults to the embedding dim
    hidden2: int | None = None      # defaults to half of it
    learning_rate: float = 1e-3
    epochs: int = 100
    batch_size: int = 32
    seed: int = 0


@dataclass
class FinetuneHead:
    """Three fully connected layers with ReLU, softmax over classes."""

    classes: list[str]
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W3: np.ndarray
    b3: np.ndarray

    def params(self) -> dict[str, np.ndarray]:
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2,
                "b2": self.b2, "W3": self.W3, "b3": self.b3}

    def with_params(self, p: dict[str, np.ndarray]) -> "FinetuneHead":
        return FinetuneHead(self.classes, np.array(p["W1"]),
                            np.array(p["b1"]), np.array(p["W2"]),
                            np.array(p["b2"]), np.array(p["W3"]),
                            np.array(p["b3"]))


def init_head(embed_dim: int, classes: list[str],
              cfg: HeadConfig) -> FinetuneHead:
    h1 = cfg.hidden1 if cfg.hidden1 is not None else embed_dim
    h2 = cfg.hidden2 if cfg.hidden2 is not None else max(1, embed_dim // 2)
    rng = np.random.default_rng(cfg.seed)
    return FinetuneHead(
        classes=list(classes),
        W1=rng.standard_normal((h1, embed_dim)) / math.sqrt(embed_dim),
        b1=np.zeros(h1),
        W2=rng.standard_normal((h2, h1)) / math.sqrt(h1),
        b2=np.zeros(h2),
        W3=rng.standard_normal((len(classes), h2)) / math.sqrt(h2),
        b3=np.zeros(len(classes)),
    )


def head_forward(head: FinetuneHead, X: np.ndarray) -> np.ndarray:
    """Class probabilities for a batch of embeddings."""
    H1 = np.maximum(0.0, X @ head.W1.T + head.b1)
    H2 = np.maximum(0.0, H1 @ head.W2.T + head.b2)
    logits = H2 @ head.W3.T + head.b3
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def head_loss_gradients(
    head: FinetuneHead, X: np.ndarray, y: np.ndarray
) -> tuple[dict[str, np.ndarray], float]:
    """Mean softmax cross-entropy and its analytic gradients."""
    n = X.shape[0]
    A1 = X @ head.W1.T + head.b1
    H1 = np.maximum(0.0, A1)
    A2 = H1 @ head.W2.T + head.b2
    H2 = np.maximum(0.0, A2)
    logits = H2 @ head.W3.T + head.b3
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = float(-log_probs[np.arange(n), y].mean())

    dlogits = np.exp(log_probs)
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n
    dH2 = dlogits @ head.W3
    dA2 = dH2 * (A2 > 0)
    dH1 = dA2 @ head.W2
    dA1 = dH1 * (A1 > 0)
    grads = {
        "W3": dlogits.T @ H2, "b3": dlogits.sum(axis=0),
        "W2": dA2.T @ H1, "b2": dA2.sum(axis=0),
        "W1": dA1.T @ X, "b1": dA1.sum(axis=0),
    }
    return grads, loss


def finetune_head(
    model: ClapModel,
    train_clips: list[PreparedClip],
    head_cfg: HeadConfig | None = None,
    classes: list[str] | None = None,
    cfg: FeaturizerConfig | None = None,
) -> FinetuneHead:
    """Train the classifier head on frozen-model audio embeddings.

    The contrastive model is only read, never written; callers can verify
    with model_hash() that it is bit-identical before and after.
    """
    head_cfg = head_cfg or HeadConfig()
    cfg = cfg or FeaturizerConfig()
    _check_featurizer(model, cfg)
    if classes is None:
        classes = sorted({normalize_label(c.emotion) for c in train_clips})
    if len(train_clips) < len(classes):
        raise InsufficientData(
            f"{len(train_clips)} samples for {len(classes)} classes"
        )
    label_to_idx = {c: i for i, c in enumerate(classes)}
    X = embed_audio(model, np.stack([c.audio_vec for c in train_clips]))
    y = np.array([label_to_idx[normalize_label(c.emotion)]
                  for c in train_clips])

    head = init_head(model.config.embed_dim, classes, head_cfg)
    params = head.params()
    adam_m = {k: np.zeros_like(v) for k, v in params.items()}
    adam_v = {k: np.zeros_like(v) for k, v in params.items()}
    rng = np.random.default_rng(head_cfg.seed)
    t = 0
    for _ in range(head_cfg.epochs):
        order = rng.permutation(len(X))
        for start in range(0, len(order), head_cfg.batch_size):
            idx = order[start:start + head_cfg.batch_size]
            grads, _ = head_loss_gradients(head.with_params(params),
                                           X[idx], y[idx])
            t += 1
            for name in params:
                g = grads[name]
                adam_m[name] = 0.9 * adam_m[name] + 0.1 * g
                adam_v[name] = 0.999 * adam_v[name] + 0.001 * g * g
                m_hat = adam_m[name] / (1.0 - 0.9 ** t)
                v_hat = adam_v[name] / (1.0 - 0.999 ** t)
                params[name] = params[name] - head_cfg.learning_rate * (
                    m_hat / (np.sqrt(v_hat) + 1e-8))
    return head.with_params(params)


def finetune_classify(
    model: ClapModel,
    head: FinetuneHead,
    test_clips: list[PreparedClip],
    cfg: FeaturizerConfig | None = None,
) -> EvalReport:
    """Classify clips with the finetuned head on frozen embeddings."""
    cfg = cfg or FeaturizerConfig()
    _check_featurizer(model, cfg)
    E = embed_audio(model, np.stack([c.audio_vec for c in test_clips]))
    probs = head_forward(head, E)
    preds = [head.classes[i] for i in probs.argmax(axis=1)]
    truths = [normalize_label(c.emotion) for c in test_clips]
    metadata = {
        "checkpoint_hash": model_hash(model),
        "classes": list(head.classes),
        "head_shape": [head.W1.shape[0], head.W2.shape[0],
                       head.W3.shape[0]],
    }
    return _classification_report("finetune", truths, preds,
                                  list(head.classes), metadata)


# -- retrieval ----------------------------------------------------------------

@dataclass(frozen=True)
class RetrievalQuery:
    """A query text, parsed into (kind, bin phrase, emotion) when possible."""

    text: str
    kind: PromptKind
    bin_phrase: str | None
    emotion: str

    @classmethod
    def parse(cls, text: str) -> "RetrievalQuery":
        text = normalize_label(text)
        for kind in _ACOUSTIC_KINDS:
            for phrase in sorted(BIN_PHRASES[kind], key=len, reverse=True):
                if text.startswith(phrase + " "):
                    return cls(text=text, kind=kind, bin_phrase=phrase,
                               emotion=text[len(phrase) + 1:])
        return cls(text=text, kind=PromptKind.CLASS, bin_phrase=None,
                   emotion=text)


@dataclass(frozen=True)
class RetrievalResult:
    query: RetrievalQuery
    ranked: list[tuple[str, float]]   # (clip_id, cosine), best first
    k: int


def retrieve_top_k(
    model: ClapModel,
    corpus: list[PreparedClip],
    query: str | RetrievalQuery,
    k: int,
    cfg: FeaturizerConfig | None = None,
) -> RetrievalResult:
    """Rank the corpus by cosine similarity to the query text.

    Equal scores order by clip id so rankings are total and
    deterministic; K larger than the corpus clamps with a warning.
    """
    cfg = cfg or FeaturizerConfig()
    _check_featurizer(model, cfg)
    if not corpus:
        raise EmptyCorpus("retrieval corpus is empty")
    if k < 1:
        raise ValueError("K must be at least 1")
    if isinstance(query, str):
        query = RetrievalQuery.parse(query)
    if k > len(corpus):
        warnings.warn(
            f"K={k} exceeds corpus size {len(corpus)}; clamping",
            stacklevel=2,
        )
        k = len(corpus)

    E_q = embed_text(model, encode_text(query.text, cfg))[0]
    E_a = embed_audio(model, np.stack([c.audio_vec for c in corpus]))
    scores = E_a @ E_q
    order = sorted(range(len(corpus)),
                   key=lambda i: (-scores[i], corpus[i].clip_id))
    ranked = [(corpus[i].clip_id, float(scores[i])) for i in order[:k]]
    return RetrievalResult(query=query, ranked=ranked, k=k)


def clip_matches_query(clip: PreparedClip, query: RetrievalQuery,
                       thresholds: BinThresholds | None = None,
                       policy: PromptPolicy | None = None) -> bool:
    """Relevance: the clip's true prompt of the query's kind equals it.

    CLASS queries match on emotion alone; acoustic queries require the
    re-rendered bin and the emotion to match exactly. Clips that cannot
    render the kind (no voiced frames for pitch) are irrelevant.
    """
    if query.kind is PromptKind.CLASS:
        return normalize_label(clip.emotion) == query.emotion
    try:
        prompt = render_prompt(query.kind, clip.profile, clip.emotion,
                               clip.sex, policy, thresholds)
    except MissingPitch:
        return False
    return prompt.text == query.text


def precision_at_k(
    result: RetrievalResult,
    query: RetrievalQuery | None = None,
    ground_truth: dict[str, PreparedClip] | None = None,
    thresholds: BinThresholds | None = None,
    policy: PromptPolicy | None = None,
) -> float:
    """Fraction of the top-K retrieved clips whose true prompt matches."""
    query = query or result.query
    if ground_truth is None:
        raise MissingGroundTruth("ground truth map is required")
    relevant = 0
    for clip_id, _ in result.ranked:
        if clip_id not in ground_truth:
            raise MissingGroundTruth(f"no ground truth for clip {clip_id!r}")
        if clip_matches_query(ground_truth[clip_id], query, thresholds,
                              policy):
            relevant += 1
    return relevant / result.k


def true_acoustic_queries(
    clips: list[PreparedClip],
    thresholds: BinThresholds | None = None,
    policy: PromptPolicy | None = None,
) -> list[str]:
    """Every acoustic-bin prompt text that occurs as some clip's truth."""
    texts: set[str] = set()
    for clip in clips:
        for kind in _ACOUSTIC_KINDS:
            try:
                texts.add(render_prompt(kind, clip.profile, clip.emotion,
                                        clip.sex, policy, thresholds).text)
            except MissingPitch:
                continue
    return sorted(texts)


def retrieval_report(
    model: ClapModel,
    corpus: list[PreparedClip],
    queries: list[str],
    ks: list[int],
    cfg: FeaturizerConfig | None = None,
    thresholds: BinThresholds | None = None,
    policy: PromptPolicy | None = None,
) -> EvalReport:
    """Precision@K table over a set of queries; accuracy is the mean."""
    ground_truth = {c.clip_id: c for c in corpus}
    table: dict[str, dict[str, float]] = {}
    for text in queries:
        query = RetrievalQuery.parse(text)
        table[query.text] = {}
        for k in ks:
            result = retrieve_top_k(model, corpus, query, k, cfg)
            table[query.text][str(k)] = precision_at_k(
                result, query, ground_truth, thresholds, policy)
    values = [v for row in table.values() for v in row.values()]
    return EvalReport(
        protocol="retrieval",
        accuracy=float(np.mean(values)) if values else 0.0,
        per_class={},
        confusion={},
        supports={},
        precision_at_k=table,
        metadata={
            "checkpoint_hash": model_hash(model),
            "ks": list(ks),
            "corpus_size": len(corpus),
        },
    )


# -- prompt-policy run matrix --------------------------------------------------

CANONICAL_POLICIES: tuple[tuple[str, PromptPolicy], ...] = tuple(
    [(kind.value, PromptPolicy(frozenset([kind]))) for kind in KIND_ORDER]
    + [("augment", PromptPolicy(frozenset(KIND_ORDER)))]
)


def run_matrix(
    datasets: dict[str, list[PreparedClip]],
    policies: list[tuple[str, PromptPolicy]] | None = None,
    train_cfg: TrainConfig | None = None,
    cfg: FeaturizerConfig | None = None,
    thresholds: BinThresholds | None = None,
    embed_dim: int = 32,
    template: str = "{label}",
) -> list[EvalReport]:
    """Train one model per prompt policy on identical data and seeds.

    Each run trains on the train-split clips of every dataset and reports
    zero-shot accuracy on the test-split clips, so the reports compare
    policies side by side.
    """
    policies = policies if policies is not None else list(CANONICAL_POLICIES)
    if not policies:
        raise ValueError("need at least one prompt policy")
    cfg = cfg or FeaturizerConfig()
    train_cfg = train_cfg or TrainConfig()

    all_clips = [c for _, clips in sorted(datasets.items()) for c in clips]
    train_clips = [c for c in all_clips if c.split == "train"]
    test_clips = [c for c in all_clips if c.split == "test"]
    candidates = sorted({normalize_label(c.emotion) for c in all_clips})

    reports = []
    for name, policy in policies:
        pairs = build_training_pairs(train_clips, policy, thresholds, cfg)
        model_cfg = ModelConfig(
            audio_dim=cfg.audio_dim, text_dim=cfg.text_dim,
            embed_dim=embed_dim, featurizer_hash=cfg.config_hash(),
        )
        model, _ = train(pairs, train_cfg,
                         init_model(model_cfg, train_cfg.seed))
        report, _ = zero_shot_classify(model, test_clips, candidates,
                                       template, cfg)
        report.protocol = "run_matrix"
        report.metadata.update({
            "policy": name,
            "train_seed": train_cfg.seed,
            "train_clips": len(train_clips),
            "test_clips": len(test_clips),
        })
        reports.append(report)
    return reports
