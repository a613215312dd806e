"""Multi-modal fusion math at toy scale.

Covers the trainable pieces that sit around a frozen text generator:
multi-view / multi-sentence embedding averaging, a linear alignment layer,
a sigmoid multi-label classifier, the classification and report
negative-log-likelihood losses, their weighted combination, and analytic
gradients through the alignment layer and classifier head. A deterministic
synthetic generator maps aligned embeddings to token logits so the report
loss is differentiable end to end without any language model.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

VISUAL_DIM = 1024
TEXT_DIM = 384
NUM_LABELS = 14
PROB_EPS = 1e-12


class ShapeError(ValueError):
    pass


# ----------------------------------------------------------------------
# embedding fusion

def average_views(views: Sequence[np.ndarray]) -> np.ndarray:
    """Elementwise arithmetic mean of per-view embeddings."""
    if len(views) == 0:
        raise ShapeError("average_views requires at least one view")
    arrs = [np.asarray(v, dtype=float) for v in views]
    dim = arrs[0].shape
    if any(a.shape != dim for a in arrs):
        raise ShapeError(f"view dimension mismatch: {[a.shape for a in arrs]}")
    return np.mean(arrs, axis=0)


def average_sentences(sentences: Sequence[np.ndarray]) -> np.ndarray:
    """Mean of per-sentence text embeddings; dimension fixed at 384."""
    if len(sentences) == 0:
        raise ShapeError("average_sentences requires at least one sentence")
    arrs = [np.asarray(s, dtype=float) for s in sentences]
    if any(a.shape != (TEXT_DIM,) for a in arrs):
        raise ShapeError(f"sentence embeddings must have dim {TEXT_DIM}")
    return np.mean(arrs, axis=0)


# ----------------------------------------------------------------------
# parameters

@dataclass
class AlignmentLayer:
    """Linear soft-prompt projection: z = W^T e + b."""

    weight: np.ndarray  # (d_in, d_out)
    bias: np.ndarray  # (d_out,)

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=float)
        self.bias = np.asarray(self.bias, dtype=float)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[1],):
            raise ShapeError("alignment weight/bias shapes inconsistent")
        if not (np.isfinite(self.weight).all() and np.isfinite(self.bias).all()):
            raise ShapeError("alignment parameters must be finite")

    @property
    def d_in(self) -> int:
        return self.weight.shape[0]

    @property
    def d_out(self) -> int:
        return self.weight.shape[1]


@dataclass
class ClassifierHead:
    """Sigmoid multi-label classifier over the 14 categories."""

    weight: np.ndarray  # (d_in, NUM_LABELS)
    bias: np.ndarray  # (NUM_LABELS,)

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=float)
        self.bias = np.asarray(self.bias, dtype=float)
        if self.weight.ndim != 2 or self.weight.shape[1] != NUM_LABELS:
            raise ShapeError(f"classifier weight must have {NUM_LABELS} output columns")
        if self.bias.shape != (NUM_LABELS,):
            raise ShapeError("classifier bias shape inconsistent")


@dataclass
class FusionParams:
    alignment: AlignmentLayer
    classifier: ClassifierHead

    def __post_init__(self):
        if self.classifier.weight.shape[0] != self.alignment.d_out:
            raise ShapeError("classifier input dim must equal alignment output dim")

    @classmethod
    def init_random(
        cls, d_in: int, d_out: int, rng: np.random.Generator, scale: float = 0.1
    ) -> "FusionParams":
        return cls(
            alignment=AlignmentLayer(
                weight=scale * rng.standard_normal((d_in, d_out)),
                bias=np.zeros(d_out),
            ),
            classifier=ClassifierHead(
                weight=scale * rng.standard_normal((d_out, NUM_LABELS)),
                bias=np.zeros(NUM_LABELS),
            ),
        )

    def save(self, path: str) -> None:
        doc = {
            "dims": {"d_in": self.alignment.d_in, "d_out": self.alignment.d_out,
                     "num_labels": NUM_LABELS},
            "alignment.weight": self.alignment.weight.tolist(),
            "alignment.bias": self.alignment.bias.tolist(),
            "classifier.weight": self.classifier.weight.tolist(),
            "classifier.bias": self.classifier.bias.tolist(),
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh)

    @classmethod
    def load(cls, path: str) -> "FusionParams":
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        return cls(
            alignment=AlignmentLayer(
                weight=np.array(doc["alignment.weight"]),
                bias=np.array(doc["alignment.bias"]),
            ),
            classifier=ClassifierHead(
                weight=np.array(doc["classifier.weight"]),
                bias=np.array(doc["classifier.bias"]),
            ),
        )


# ----------------------------------------------------------------------
# forward ops

def align(e: np.ndarray, a: AlignmentLayer) -> np.ndarray:
    e = np.asarray(e, dtype=float)
    if e.shape != (a.d_in,):
        raise ShapeError(f"embedding dim {e.shape} != alignment input dim ({a.d_in},)")
    return a.weight.T @ e + a.bias


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def classify(e: np.ndarray, h: ClassifierHead) -> np.ndarray:
    """Per-label probabilities, strictly inside (0, 1)."""
    e = np.asarray(e, dtype=float)
    if e.shape != (h.weight.shape[0],):
        raise ShapeError("embedding dim does not match classifier input dim")
    p = _sigmoid(h.weight.T @ e + h.bias)
    return np.clip(p, PROB_EPS, 1.0 - PROB_EPS)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


# ----------------------------------------------------------------------
# losses

def loss_classification(p: np.ndarray, y: np.ndarray) -> float:
    """Summed binary cross-entropy over the 14 labels."""
    p = np.asarray(p, dtype=float)
    y = np.asarray(y, dtype=float)
    if p.shape != (NUM_LABELS,) or y.shape != (NUM_LABELS,):
        raise ShapeError(f"expected length-{NUM_LABELS} vectors")
    p = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    return float(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)).sum())


def loss_report(logits: np.ndarray, reference: Sequence[int]) -> float:
    """Teacher-forced next-token negative log-likelihood."""
    logits = np.asarray(logits, dtype=float)
    ref = np.asarray(reference, dtype=int)
    if logits.ndim != 2 or logits.shape[0] != ref.shape[0]:
        raise ShapeError("logit rows must equal reference length")
    if ref.size and (ref.min() < 0 or ref.max() >= logits.shape[1]):
        raise ShapeError("token id out of vocabulary")
    lsm = _log_softmax(logits)
    return float(-lsm[np.arange(ref.shape[0]), ref].sum())


def total_loss(l_cls: float, l_rep: float, alpha: float = 1.0) -> float:
    """Combined objective: classification loss plus alpha times report loss."""
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    return l_cls + alpha * l_rep


# ----------------------------------------------------------------------
# synthetic generator + batch forward/backward

@dataclass
class ToyGenerator:
    """Deterministic linear map from aligned embeddings to token logits.

    Stands in for a frozen text generator: logits[i] = U[i] @ z + c[i].
    Fixed (never trained), so gradients flow only into the alignment layer
    and classifier head.
    """

    u: np.ndarray  # (seq_len, vocab, d_out)
    c: np.ndarray  # (seq_len, vocab)

    @classmethod
    def create(cls, seq_len: int, vocab: int, d_out: int, seed: int = 0) -> "ToyGenerator":
        rng = np.random.default_rng(seed)
        return cls(
            u=rng.standard_normal((seq_len, vocab, d_out)),
            c=0.1 * rng.standard_normal((seq_len, vocab)),
        )

    def logits(self, z: np.ndarray) -> np.ndarray:
        return self.u @ z + self.c


@dataclass
class FusionExample:
    """One training example: fused visual embedding, labels, reference tokens."""

    embedding: np.ndarray  # (d_in,)
    labels: np.ndarray  # (NUM_LABELS,) 0/1
    reference: np.ndarray  # (seq_len,) token ids


@dataclass
class FusionGrad:
    alignment_weight: np.ndarray
    alignment_bias: np.ndarray
    classifier_weight: np.ndarray
    classifier_bias: np.ndarray


def batch_total_loss(
    params: FusionParams,
    batch: Sequence[FusionExample],
    generator: ToyGenerator,
    alpha: float = 1.0,
) -> float:
    total = 0.0
    for ex in batch:
        z = align(ex.embedding, params.alignment)
        p = classify(z, params.classifier)
        l_cls = loss_classification(p, ex.labels)
        l_rep = loss_report(generator.logits(z), ex.reference)
        total += total_loss(l_cls, l_rep, alpha)
    return total


def grad_total_loss(
    params: FusionParams,
    batch: Sequence[FusionExample],
    generator: ToyGenerator,
    alpha: float = 1.0,
) -> FusionGrad:
    """Analytic gradient of the summed batch loss w.r.t. all trainable
    entries (alignment weight/bias and classifier weight/bias)."""
    a, h = params.alignment, params.classifier
    g_aw = np.zeros_like(a.weight)
    g_ab = np.zeros_like(a.bias)
    g_cw = np.zeros_like(h.weight)
    g_cb = np.zeros_like(h.bias)

    for ex in batch:
        x = np.asarray(ex.embedding, dtype=float)
        y = np.asarray(ex.labels, dtype=float)
        z = align(x, a)

        # Classification branch: dL/dlogit = p - y for sigmoid + BCE.
        p = _sigmoid(h.weight.T @ z + h.bias)
        d_logit = p - y
        g_cw += np.outer(z, d_logit)
        g_cb += d_logit
        dz = h.weight @ d_logit

        # Report branch: dL/dlogits = softmax - onehot, mapped back via U.
        logits = generator.logits(z)
        sm = np.exp(_log_softmax(logits))
        sm[np.arange(len(ex.reference)), np.asarray(ex.reference, dtype=int)] -= 1.0
        dz += alpha * np.einsum("lv,lvd->d", sm, generator.u)

        g_aw += np.outer(x, dz)
        g_ab += dz

    return FusionGrad(g_aw, g_ab, g_cw, g_cb)


def make_toy_task(
    n: int = 32,
    d_in: int = 16,
    d_out: int = 8,
    vocab: int = 16,
    seq_len: int = 6,
    seed: int = 0,
) -> tuple[list[FusionExample], ToyGenerator]:
    """Build a small learnable batch for exercising the training loop.

    Labels and references both derive from a hidden teacher alignment, so a
    student started from random parameters can drive the loss down instead
    of fitting noise.
    """
    rng = np.random.default_rng(seed)
    generator = ToyGenerator.create(seq_len, vocab, d_out, seed=seed + 1)
    teacher = FusionParams.init_random(d_in, d_out, rng)
    batch = []
    for _ in range(n):
        x = rng.standard_normal(d_in)
        z = align(x, teacher.alignment)
        labels = (classify(z, teacher.classifier) > 0.5).astype(float)
        reference = np.argmax(generator.logits(z), axis=1)
        batch.append(FusionExample(embedding=x, labels=labels, reference=reference))
    return batch, generator


def gradient_step(params: FusionParams, grad: FusionGrad, lr: float) -> FusionParams:
    return FusionParams(
        alignment=AlignmentLayer(
            weight=params.alignment.weight - lr * grad.alignment_weight,
            bias=params.alignment.bias - lr * grad.alignment_bias,
        ),
        classifier=ClassifierHead(
            weight=params.classifier.weight - lr * grad.classifier_weight,
            bias=params.classifier.bias - lr * grad.classifier_bias,
        ),
    )


def train_toy(
    params: FusionParams,
    batch: Sequence[FusionExample],
    generator: ToyGenerator,
    steps: int = 200,
    lr: float = 0.01,
    alpha: float = 1.0,
) -> tuple[FusionParams, list[float]]:
    """Plain full-batch gradient descent; returns params and the loss curve."""
    losses = [batch_total_loss(params, batch, generator, alpha)]
    n = max(1, len(batch))
    for _ in range(steps):
        grad = grad_total_loss(params, batch, generator, alpha)
        params = gradient_step(params, grad, lr / n)
        losses.append(batch_total_loss(params, batch, generator, alpha))
    return params, losses


# ----------------------------------------------------------------------
# report assembly

CONDITIONS_SENTINEL = "IDENTIFIED CONDITIONS:"


def assemble_report(
    findings_text: str,
    probs: Sequence[float],
    label_names: Sequence[str],
    threshold: float = 0.5,
) -> str:
    """Append the identified-conditions section to the findings text.

    Labels with probability >= threshold are listed in descending
    probability order; an empty set renders as "none".
    """
    if len(probs) != len(label_names):
        raise ShapeError("probs and label_names must have equal length")
    chosen = sorted(
        ((p, name) for p, name in zip(probs, label_names) if p >= threshold),
        key=lambda pn: (-pn[0], pn[1]),
    )
    listing = "; ".join(name for _, name in chosen) if chosen else "none"
    suffix = f"{CONDITIONS_SENTINEL} {listing}"
    return f"{findings_text.rstrip()}\n{suffix}" if findings_text.strip() else suffix


# ----------------------------------------------------------------------
# deterministic embedding providers (stand-ins for vision / sentence encoders)

def _hash_vector(data: bytes, dim: int, salt: bytes) -> np.ndarray:
    import hashlib

    out = np.empty(dim, dtype=float)
    counter = 0
    i = 0
    while i < dim:
        digest = hashlib.sha256(salt + counter.to_bytes(4, "big") + data).digest()
        for j in range(0, len(digest) - 1, 2):
            if i >= dim:
                break
            val = int.from_bytes(digest[j : j + 2], "big")
            out[i] = val / 32767.5 - 1.0
            i += 1
        counter += 1
    return out


def visual_embedding(image_bytes: bytes) -> np.ndarray:
    """Deterministic 1024-dim stand-in for a vision transformer embedding."""
    return _hash_vector(image_bytes, VISUAL_DIM, b"visual")


def text_embedding(sentence: str) -> np.ndarray:
    """Deterministic 384-dim stand-in for a sentence encoder embedding."""
    return _hash_vector(sentence.encode("utf-8"), TEXT_DIM, b"text")
