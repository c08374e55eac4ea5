"""Four collaborative-filtering models on a shared linear-propagation backbone.

lightgcn: ranking loss only. sgl: adds a contrastive loss over two
edge-dropped graph views. simgcl: contrastive loss over two noise-perturbed
propagations. directau: alignment plus uniformity, no negatives.

Every model exposes the same trio: forward (embedding propagation),
cal_loss (loss plus analytic gradient w.r.t. the free embeddings), and
full_predict (scores for all items). The propagation operator
P = mean(A^0..A^L) is symmetric, so its adjoint reuses the forward code
path; gradients assembled here are checked against finite differences in
the test suite.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .augment import AugmentSpec, edge_dropout, feature_noise_term
from .errors import ConfigError, NumericError, StructuralError
from .objectives import (
    GradBuffer,
    LossValue,
    alignment_loss,
    bpr_loss,
    infonce,
    l2_reg,
    uniformity_loss,
)
from .sparse import CsrMatrix, spmm

MODEL_NAMES = ("lightgcn", "sgl", "simgcl", "directau")

# fields each model is allowed to set, beyond the shared layers/dim/reg
_MODEL_FIELDS = {
    "lightgcn": frozenset(),
    "sgl": frozenset({"ssl_weight", "temperature", "dropout"}),
    "simgcl": frozenset({"ssl_weight", "temperature", "noise"}),
    "directau": frozenset({"gamma"}),
}


@dataclass(frozen=True)
class ModelParams:
    """Model choice plus the hyperparameters that model actually uses."""

    name: str
    layers: int = 2
    dim: int = 64
    reg: float = 0.0
    ssl_weight: float | None = None   # sgl, simgcl
    temperature: float | None = None  # sgl, simgcl
    dropout: float | None = None      # sgl
    noise: float | None = None        # simgcl
    gamma: float | None = None        # directau

    def __post_init__(self):
        if self.name not in MODEL_NAMES:
            raise ConfigError(f"unknown model {self.name!r}")
        if self.layers < 0:
            raise ConfigError("layers must be >= 0")
        if self.dim < 1:
            raise ConfigError("dim must be >= 1")
        if self.reg < 0:
            raise ConfigError("reg must be >= 0")
        allowed = _MODEL_FIELDS[self.name]
        for name in ("ssl_weight", "temperature", "dropout", "noise", "gamma"):
            value = getattr(self, name)
            if value is None:
                if name in allowed:
                    raise ConfigError(f"model {self.name!r} requires {name}")
                continue
            if name not in allowed:
                raise ConfigError(f"{name} is not a parameter of model {self.name!r}")
        if self.ssl_weight is not None and self.ssl_weight < 0:
            raise ConfigError("ssl_weight must be >= 0")
        if self.temperature is not None and not self.temperature > 0:
            raise ConfigError("temperature must be > 0")
        if self.dropout is not None and not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")
        if self.noise is not None and not self.noise > 0:
            raise ConfigError("noise must be > 0")
        if self.gamma is not None and self.gamma < 0:
            raise ConfigError("gamma must be >= 0")

    @property
    def is_contrastive(self) -> bool:
        return self.name in ("sgl", "simgcl")

    def augmentation(self) -> AugmentSpec:
        """The view-generating operator this model trains against."""
        if self.name == "sgl":
            return AugmentSpec("edge_dropout", self.dropout)
        if self.name == "simgcl":
            return AugmentSpec("feature_noise", self.noise)
        return AugmentSpec("identity")


@dataclass
class EmbeddingTable:
    """The free embeddings E0: user rows first, then item rows."""

    matrix: np.ndarray  # (M+N) x d, float64
    dim: int
    init_scale: float

    @classmethod
    def init_uniform(cls, n_rows: int, dim: int, seed) -> "EmbeddingTable":
        """Zero-mean uniform init with scale 0.1/sqrt(d), seed-controlled."""
        scale = 0.1 / np.sqrt(dim)
        rng = np.random.default_rng(seed)
        return cls(rng.uniform(-scale, scale, size=(n_rows, dim)), dim, scale)


@dataclass
class EpochViews:
    """Augmentation state sampled once per epoch.

    sgl carries two edge-dropped adjacencies; simgcl carries two noise
    streams that forward() consumes a fresh draw from on every call.
    """

    adj1: CsrMatrix | None = None
    adj2: CsrMatrix | None = None
    rng1: np.random.Generator | None = None
    rng2: np.random.Generator | None = None


@dataclass
class ForwardCache:
    """Everything the gradient pass (and a replayed forward) needs."""

    e0: np.ndarray
    adjacency: CsrMatrix
    layers: int
    n_users: int
    view_adj1: CsrMatrix | None = None
    view_adj2: CsrMatrix | None = None
    noise_terms1: list[np.ndarray] | None = None
    noise_terms2: list[np.ndarray] | None = None


@dataclass
class ForwardOutput:
    z: np.ndarray
    z_view1: np.ndarray | None
    z_view2: np.ndarray | None
    cache: ForwardCache


@dataclass(frozen=True)
class Batch:
    users: np.ndarray
    pos_items: np.ndarray
    neg_items: np.ndarray | None = None


def propagate(
    adjacency: CsrMatrix,
    e0: np.ndarray,
    layers: int,
    *,
    noise_eps: float = 0.0,
    noise_rng: np.random.Generator | None = None,
    noise_terms: list[np.ndarray] | None = None,
    include_input: bool = True,
):
    """Layer-averaged linear propagation Z = mean over l of A^l E0.

    With noise_eps set, each propagated layer receives a fresh additive
    perturbation (drawn from noise_rng, or replayed from noise_terms); the
    terms actually applied are returned so a gradient pass or a replayed
    evaluation can treat them as constants.

    Returns (z, terms) where terms is None for the unperturbed case.
    """
    e0 = np.asarray(e0, dtype=np.float64)
    if e0.ndim != 2 or e0.shape[0] != adjacency.n_cols:
        raise StructuralError("embedding row count must match adjacency size")
    if layers < 0:
        raise StructuralError("layers must be >= 0")
    if not include_input and layers == 0:
        raise StructuralError("cannot exclude the input layer when layers == 0")
    perturbed = noise_eps > 0.0 or noise_terms is not None
    terms: list[np.ndarray] | None = [] if perturbed else None
    acc = e0.copy() if include_input else np.zeros_like(e0)
    e = e0
    for layer in range(layers):
        e = spmm(adjacency, e)
        if perturbed:
            term = (
                noise_terms[layer]
                if noise_terms is not None
                else feature_noise_term(e, noise_eps, noise_rng)
            )
            e = e + term
            terms.append(term)
        acc += e
    denom = layers + 1 if include_input else layers
    return acc / denom, terms


def propagate_grad(adjacency: CsrMatrix, dz: np.ndarray, layers: int, include_input: bool = True) -> np.ndarray:
    """Adjoint of propagate: since P is a symmetric polynomial in a symmetric
    matrix, the pullback is P applied to dz: the forward code path."""
    de0, _ = propagate(adjacency, dz, layers, include_input=include_input)
    return de0


def sample_epoch_views(
    params: ModelParams,
    raw_adjacency: CsrMatrix | None,
    rng: np.random.Generator,
) -> EpochViews:
    """Draw this epoch's augmentation state for the given model."""
    spec = params.augmentation()
    if spec.kind == "edge_dropout":
        if raw_adjacency is None:
            raise StructuralError("graph views need the unnormalized adjacency")
        r1, r2 = rng.spawn(2)
        return EpochViews(
            adj1=edge_dropout(raw_adjacency, spec.rate_or_eps, r1),
            adj2=edge_dropout(raw_adjacency, spec.rate_or_eps, r2),
        )
    if spec.kind == "feature_noise":
        r1, r2 = rng.spawn(2)
        return EpochViews(rng1=r1, rng2=r2)
    return EpochViews()


def forward(
    params: ModelParams,
    e0: np.ndarray,
    adjacency: CsrMatrix,
    n_users: int,
    views: EpochViews | None = None,
) -> ForwardOutput:
    """Model-specific forward pass producing prediction (and view) embeddings."""
    z, _ = propagate(adjacency, e0, params.layers)
    cache = ForwardCache(e0=np.asarray(e0, dtype=np.float64), adjacency=adjacency,
                         layers=params.layers, n_users=n_users)
    if params.name == "sgl":
        if views is None or views.adj1 is None or views.adj2 is None:
            raise StructuralError("sgl forward requires sampled graph views")
        z1, _ = propagate(views.adj1, e0, params.layers)
        z2, _ = propagate(views.adj2, e0, params.layers)
        cache.view_adj1, cache.view_adj2 = views.adj1, views.adj2
        return ForwardOutput(z, z1, z2, cache)
    if params.name == "simgcl":
        if views is None or views.rng1 is None or views.rng2 is None:
            raise StructuralError("simgcl forward requires noise streams")
        z1, t1 = propagate(adjacency, e0, params.layers, noise_eps=params.noise, noise_rng=views.rng1)
        z2, t2 = propagate(adjacency, e0, params.layers, noise_eps=params.noise, noise_rng=views.rng2)
        cache.noise_terms1, cache.noise_terms2 = t1, t2
        return ForwardOutput(z, z1, z2, cache)
    return ForwardOutput(z, None, None, cache)


def forward_replay(params: ModelParams, cache: ForwardCache, e0: np.ndarray) -> ForwardOutput:
    """Re-run a forward pass at new embeddings with the cached views/noise.

    The perturbations are held constant, so this is exactly the function the
    gradient pass differentiates and finite-difference checks must probe.
    """
    z, _ = propagate(cache.adjacency, e0, cache.layers)
    new = ForwardCache(e0=np.asarray(e0, dtype=np.float64), adjacency=cache.adjacency,
                       layers=cache.layers, n_users=cache.n_users,
                       view_adj1=cache.view_adj1, view_adj2=cache.view_adj2,
                       noise_terms1=cache.noise_terms1, noise_terms2=cache.noise_terms2)
    if params.name == "sgl":
        z1, _ = propagate(cache.view_adj1, e0, cache.layers)
        z2, _ = propagate(cache.view_adj2, e0, cache.layers)
        return ForwardOutput(z, z1, z2, new)
    if params.name == "simgcl":
        z1, _ = propagate(cache.adjacency, e0, cache.layers, noise_terms=cache.noise_terms1)
        z2, _ = propagate(cache.adjacency, e0, cache.layers, noise_terms=cache.noise_terms2)
        return ForwardOutput(z, z1, z2, new)
    return ForwardOutput(z, None, None, new)


def _bpr_term(fwd: ForwardOutput, batch: Batch):
    """Ranking loss on the clean embeddings; returns (loss, dZ buffer)."""
    z = fwd.z
    m = fwd.cache.n_users
    u = batch.users
    p = m + batch.pos_items
    n = m + batch.neg_items
    s_pos = np.sum(z[u] * z[p], axis=1)
    s_neg = np.sum(z[u] * z[n], axis=1)
    lv, d_pos, d_neg = bpr_loss(s_pos, s_neg)
    dz = GradBuffer(z.shape)
    dz.add_rows(u, d_pos[:, None] * z[p] + d_neg[:, None] * z[n])
    dz.add_rows(p, d_pos[:, None] * z[u])
    dz.add_rows(n, d_neg[:, None] * z[u])
    return lv.total, dz.array


def _contrastive_term(params: ModelParams, fwd: ForwardOutput, batch: Batch):
    """InfoNCE over the batch's unique users and positive items, per view pair.

    Returns (raw ssl loss, dZ1, dZ2) before the ssl_weight is applied.
    """
    m = fwd.cache.n_users
    uu = np.unique(batch.users)
    pi = m + np.unique(batch.pos_items)
    lv_u, du1, du2 = infonce(fwd.z_view1[uu], fwd.z_view2[uu], params.temperature)
    lv_i, di1, di2 = infonce(fwd.z_view1[pi], fwd.z_view2[pi], params.temperature)
    dz1 = np.zeros_like(fwd.z_view1)
    dz2 = np.zeros_like(fwd.z_view2)
    dz1[uu] = du1
    dz1[pi] = di1
    dz2[uu] = du2
    dz2[pi] = di2
    return lv_u.total + lv_i.total, dz1, dz2


def cal_loss(params: ModelParams, fwd: ForwardOutput, batch: Batch):
    """Total loss for one batch plus its gradient w.r.t. the free embeddings.

    Per-row loss gradients are scattered into dZ (and the view dZs) and
    pulled back through the propagation of each view; weight decay acts on
    the touched E0 rows directly.
    """
    cache = fwd.cache
    m = cache.n_users
    batch = Batch(
        np.asarray(batch.users, dtype=np.int64),
        np.asarray(batch.pos_items, dtype=np.int64),
        None if batch.neg_items is None else np.asarray(batch.neg_items, dtype=np.int64),
    )
    components: dict[str, float] = {}
    de0 = np.zeros_like(cache.e0)

    if params.name == "directau":
        u = batch.users
        p = m + batch.pos_items
        align_lv, d_hu, d_hi = alignment_loss(fwd.z[u], fwd.z[p])
        unif_u, d_uu = uniformity_loss(fwd.z[u])
        unif_i, d_up = uniformity_loss(fwd.z[p])
        gamma = params.gamma
        dz = GradBuffer(fwd.z.shape)
        dz.add_rows(u, d_hu + gamma * d_uu)
        dz.add_rows(p, d_hi + gamma * d_up)
        de0 += propagate_grad(cache.adjacency, dz.array, cache.layers)
        components["rec"] = align_lv.total
        components["ssl"] = gamma * (unif_u.total + unif_i.total)
        touched = np.unique(np.concatenate([u, p]))
    else:
        if batch.neg_items is None:
            raise StructuralError(f"model {params.name!r} requires sampled negatives")
        rec_loss, dz = _bpr_term(fwd, batch)
        de0 += propagate_grad(cache.adjacency, dz, cache.layers)
        components["rec"] = rec_loss
        if params.is_contrastive and params.ssl_weight > 0.0:
            ssl_raw, dz1, dz2 = _contrastive_term(params, fwd, batch)
            w = params.ssl_weight
            adj1 = cache.view_adj1 if params.name == "sgl" else cache.adjacency
            adj2 = cache.view_adj2 if params.name == "sgl" else cache.adjacency
            de0 += w * propagate_grad(adj1, dz1, cache.layers)
            de0 += w * propagate_grad(adj2, dz2, cache.layers)
            components["ssl"] = w * ssl_raw
        touched = np.unique(np.concatenate([
            batch.users, m + batch.pos_items, m + batch.neg_items,
        ]))

    if params.reg > 0.0:
        reg_lv, reg_grad = l2_reg(cache.e0[touched], params.reg)
        de0[touched] += reg_grad
        components["reg"] = reg_lv.total

    loss = LossValue.of(**components)
    for name, value in loss.components.items():
        if not np.isfinite(value):
            raise NumericError(f"non-finite loss component {name!r}: {value}")
    return loss, de0


def full_predict(fwd: ForwardOutput, users) -> np.ndarray:
    """Preference scores of the given users for every item (no masking)."""
    users = np.asarray(users, dtype=np.int64)
    m = fwd.cache.n_users
    if users.size and (users.min() < 0 or users.max() >= m):
        raise StructuralError("user index out of range")
    return fwd.z[users] @ fwd.z[m:].T


# --- checkpoint format -------------------------------------------------------
#
# A checkpoint directory holds `meta` (key<TAB>value text) and `e0.bin`:
# 16-byte header (8-byte magic, two uint32 LE counts) followed by the
# row-major float32 embedding matrix.

CHECKPOINT_MAGIC = b"SSLREC01"


def save_checkpoint(path, e0: np.ndarray, meta: dict) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    rows, cols = e0.shape
    with open(path / "e0.bin", "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", rows, cols))
        fh.write(np.ascontiguousarray(e0, dtype="<f4").tobytes())
    with open(path / "meta", "w", encoding="utf-8") as fh:
        for key, value in meta.items():
            fh.write(f"{key}\t{value}\n")


def load_checkpoint(path):
    """Read a checkpoint; returns (e0 as float64, meta dict of strings)."""
    path = Path(path)
    with open(path / "e0.bin", "rb") as fh:
        header = fh.read(16)
        if len(header) != 16 or header[:8] != CHECKPOINT_MAGIC:
            raise StructuralError(f"{path}: not a checkpoint (bad magic)")
        rows, cols = struct.unpack("<II", header[8:])
        data = np.frombuffer(fh.read(), dtype="<f4")
    if data.size != rows * cols:
        raise StructuralError(f"{path}: truncated checkpoint payload")
    meta = {}
    with open(path / "meta", "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line:
                key, _, value = line.partition("\t")
                meta[key] = value
    return data.astype(np.float64).reshape(rows, cols), meta
