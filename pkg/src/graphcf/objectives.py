"""Recommendation and self-supervised losses with analytic gradients.

Every function returns a LossValue plus gradients w.r.t. its direct inputs;
assembling those into embedding-table gradients is the model layer's job.
All math runs in 64-bit so finite-difference checks hold at 1e-4.

Conventions: batch losses use mean reduction so hyperparameters stay stable
across batch sizes; the contrastive/geometry losses L2-normalize their rows
internally (gradients flow through the normalization), while ranking scores
stay unnormalized.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericError, StructuralError


@dataclass(frozen=True)
class LossValue:
    """A scalar loss with its named components; total is their sum."""

    total: float
    components: dict[str, float] = field(default_factory=dict)

    @classmethod
    def of(cls, **components: float) -> "LossValue":
        comps = {k: float(v) for k, v in components.items()}
        return cls(float(sum(comps.values())), comps)


class GradBuffer:
    """Dense accumulator for per-row gradients, zeroed at construction."""

    def __init__(self, shape):
        self.array = np.zeros(shape)

    def add_rows(self, rows: np.ndarray, grads: np.ndarray) -> None:
        """Accumulate grads into the given rows; repeated rows sum."""
        np.add.at(self.array, rows, grads)


def _require_finite(name: str, *arrays: np.ndarray) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericError(f"{name}: non-finite input")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # piecewise form avoids overflow in exp for large |x|
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def normalize_rows(z: np.ndarray, context: str = "embedding"):
    """Return (z / ||z||, norms); a zero-norm row is a dead-row bug upstream."""
    z = np.asarray(z, dtype=np.float64)
    norms = np.sqrt(np.sum(z * z, axis=1, keepdims=True))
    if np.any(norms == 0.0):
        row = int(np.flatnonzero(norms[:, 0] == 0.0)[0])
        raise NumericError(f"{context}: zero-norm row {row}")
    return z / norms, norms


def normalize_rows_backprop(z_hat: np.ndarray, norms: np.ndarray, d_hat: np.ndarray) -> np.ndarray:
    """Pull a gradient back through row-wise L2 normalization."""
    radial = np.sum(z_hat * d_hat, axis=1, keepdims=True)
    return (d_hat - z_hat * radial) / norms


def bpr_loss(s_pos: np.ndarray, s_neg: np.ndarray):
    """Pairwise logistic ranking loss, mean over the batch.

    loss = mean(softplus(-(s_pos - s_neg))); evaluated through logaddexp so
    saturated pairs neither overflow nor lose the gradient signal.
    """
    s_pos = np.asarray(s_pos, dtype=np.float64)
    s_neg = np.asarray(s_neg, dtype=np.float64)
    if s_pos.shape != s_neg.shape or s_pos.ndim != 1 or s_pos.size == 0:
        raise StructuralError("bpr_loss expects equal-length nonempty score vectors")
    _require_finite("bpr_loss", s_pos, s_neg)
    delta = s_pos - s_neg
    loss = float(np.mean(np.logaddexp(0.0, -delta)))
    g = _sigmoid(-delta) / delta.size  # = (1 - sigmoid(delta)) / B
    return LossValue.of(bpr=loss), -g, g


def infonce(z1: np.ndarray, z2: np.ndarray, tau: float):
    """InfoNCE between two views; negatives are the other in-batch rows.

    Row i of each view is the same node. Rows are L2-normalized, similarities
    divided by tau, and the positive logit sits on the diagonal. Returns
    (loss, d_z1, d_z2).
    """
    if not tau > 0.0:
        raise ConfigError(f"temperature must be > 0, got {tau}")
    z1 = np.asarray(z1, dtype=np.float64)
    z2 = np.asarray(z2, dtype=np.float64)
    if z1.shape != z2.shape or z1.ndim != 2 or z1.shape[0] == 0:
        raise StructuralError("infonce expects two equal-shape nonempty row batches")
    b = z1.shape[0]
    h1, n1 = normalize_rows(z1, "infonce view 1")
    h2, n2 = normalize_rows(z2, "infonce view 2")
    # the B x B buffer is reused in place: logits -> softmax -> scaled dS
    logits = (h1 @ h2.T) / tau
    positive = np.diag(logits).copy()
    m = logits.max(axis=1, keepdims=True)
    logits -= m
    np.exp(logits, out=logits)
    sums = logits.sum(axis=1, keepdims=True)
    loss = float(np.mean(m[:, 0] + np.log(sums[:, 0]) - positive))
    scale = 1.0 / (b * tau)
    logits /= sums
    logits *= scale
    diag = np.arange(b)
    logits[diag, diag] -= scale  # dL/d(similarities), softmax minus identity
    d_z1 = normalize_rows_backprop(h1, n1, logits @ h2)
    d_z2 = normalize_rows_backprop(h2, n2, logits.T @ h1)
    return LossValue.of(infonce=loss), d_z1, d_z2


def alignment_loss(zu: np.ndarray, zi: np.ndarray):
    """Mean squared distance between L2-normalized positive pairs."""
    zu = np.asarray(zu, dtype=np.float64)
    zi = np.asarray(zi, dtype=np.float64)
    if zu.shape != zi.shape or zu.ndim != 2 or zu.shape[0] == 0:
        raise StructuralError("alignment_loss expects two equal-shape nonempty row batches")
    b = zu.shape[0]
    hu, nu = normalize_rows(zu, "alignment users")
    hi, ni = normalize_rows(zi, "alignment items")
    diff = hu - hi
    loss = float(np.mean(np.sum(diff * diff, axis=1)))
    d_hu = 2.0 * diff / b
    return (
        LossValue.of(alignment=loss),
        normalize_rows_backprop(hu, nu, d_hu),
        normalize_rows_backprop(hi, ni, -d_hu),
    )


def uniformity_loss(z: np.ndarray):
    """log-mean of exp(-2 d^2) over distinct pairs of L2-normalized rows.

    Always <= 0, with equality only when all normalized rows coincide.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] < 2:
        raise StructuralError("uniformity_loss needs at least two rows")
    b = z.shape[0]
    h, n = normalize_rows(z, "uniformity")
    gram = np.minimum(h @ h.T, 1.0)  # rounding can push unit dot products past 1
    # 4*gram - 4 equals -2 * ||h_i - h_j||^2 for unit rows and lies in [-8, 0],
    # so the plain exponential neither overflows nor underflows
    exp_t = np.exp(4.0 * gram - 4.0)
    np.fill_diagonal(exp_t, 0.0)
    total = exp_t.sum()
    loss = float(np.log(total) - np.log(b * (b - 1)))
    weights = exp_t / total
    d_h = 8.0 * (weights @ h)  # weights is symmetric with zero diagonal
    return LossValue.of(uniformity=loss), normalize_rows_backprop(h, n, d_h)


def l2_reg(rows: np.ndarray, lam: float):
    """Weight decay over the embedding rows a batch touched."""
    if lam < 0.0:
        raise ConfigError(f"regularization weight must be >= 0, got {lam}")
    rows = np.asarray(rows, dtype=np.float64)
    loss = 0.5 * lam * float(np.sum(rows * rows))
    return LossValue.of(l2=loss), lam * rows
