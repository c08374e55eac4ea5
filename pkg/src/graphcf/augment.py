"""Model-agnostic view augmentation: graph corruption and feature perturbation.

All operators take an explicit seeded numpy Generator so callers own stream
partitioning; given the same stream state the output is bitwise reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .sparse import CsrMatrix, from_arrays, normalize_sym

AUGMENT_KINDS = ("edge_dropout", "feature_noise", "embedding_dropout", "identity")


@dataclass(frozen=True)
class AugmentSpec:
    """Declarative description of one augmentation operator.

    rate_or_eps is the dropout rate in [0, 1) for the dropout kinds and the
    perturbation magnitude (> 0) for feature_noise; ignored for identity.
    """

    kind: str
    rate_or_eps: float = 0.0
    stream_seed: int = 0

    def __post_init__(self):
        if self.kind not in AUGMENT_KINDS:
            raise ConfigError(f"unknown augmentation kind {self.kind!r}")
        if self.kind in ("edge_dropout", "embedding_dropout"):
            if not 0.0 <= self.rate_or_eps < 1.0:
                raise ConfigError(f"{self.kind} rate must be in [0, 1), got {self.rate_or_eps}")
        elif self.kind == "feature_noise" and not self.rate_or_eps > 0.0:
            raise ConfigError(f"feature_noise magnitude must be > 0, got {self.rate_or_eps}")


def edge_dropout(adjacency_raw: CsrMatrix, rho: float, rng: np.random.Generator) -> CsrMatrix:
    """Drop each undirected edge with probability rho, then renormalize.

    The (i, j) and (j, i) entries share one coin flip so the view stays
    symmetric. Expects the unnormalized symmetric adjacency; returns the
    symmetric normalization of the surviving graph, where dropped-to-zero
    degrees yield zero rows.
    """
    if not 0.0 <= rho < 1.0:
        raise ConfigError(f"edge dropout rate must be in [0, 1), got {rho}")
    rows = adjacency_raw.row_ids()
    cols = adjacency_raw.col_indices
    vals = adjacency_raw.values
    upper = rows < cols
    diag = rows == cols
    # coins are drawn in canonical storage order of the upper triangle, so a
    # given stream always drops the same edges regardless of thread count
    keep_u = rng.random(int(upper.sum())) >= rho
    keep_d = rng.random(int(diag.sum())) >= rho
    ui, uj, uv = rows[upper][keep_u], cols[upper][keep_u], vals[upper][keep_u]
    di, dv = rows[diag][keep_d], vals[diag][keep_d]
    view = from_arrays(
        adjacency_raw.n_rows,
        adjacency_raw.n_cols,
        np.concatenate([ui, uj, di]),
        np.concatenate([uj, ui, di]),
        np.concatenate([uv, uv, dv]),
    )
    return normalize_sym(view)


def feature_noise_term(z: np.ndarray, eps: float, rng: np.random.Generator) -> np.ndarray:
    """The additive perturbation of feature_noise, returned separately.

    Each row's term is eps * sign(z) * (zeta / ||zeta||) with zeta drawn
    elementwise from U(0, 1), so the displacement norm per row is exactly
    eps. sign(0) counts as +1.
    """
    if not eps > 0.0:
        raise ConfigError(f"feature noise magnitude must be > 0, got {eps}")
    z = np.asarray(z, dtype=np.float64)
    zeta = rng.random(z.shape)
    norms = np.sqrt(np.sum(zeta * zeta, axis=1, keepdims=True))
    return eps * np.where(z >= 0, 1.0, -1.0) * (zeta / norms)


def feature_noise(z: np.ndarray, eps: float, rng: np.random.Generator) -> np.ndarray:
    """Perturb each row by a random direction of exact L2 length eps."""
    z = np.asarray(z, dtype=np.float64)
    return z + feature_noise_term(z, eps, rng)


def embedding_dropout(z: np.ndarray, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted dropout: zero elements with probability rate, rescale survivors.

    Survivors are scaled by 1/(1-rate) so the elementwise expectation is
    preserved.
    """
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"embedding dropout rate must be in [0, 1), got {rate}")
    z = np.asarray(z, dtype=np.float64)
    mask = rng.random(z.shape) >= rate
    return z * mask / (1.0 - rate)
