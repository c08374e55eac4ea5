"""Shared test utilities: synthetic datasets and finite-difference checks."""

import numpy as np

from graphcf.datahub import InteractionDataset, RawInteraction
from graphcf.models import (
    Batch,
    EmbeddingTable,
    ModelParams,
    cal_loss,
    forward,
    forward_replay,
    sample_epoch_views,
)


def rel_err(a, b, floor=1e-6):
    """Elementwise relative error with a floor so near-zero pairs compare sanely."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def fd_gradient(f, x, h=1e-5):
    """Central finite differences of scalar f at x, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = grad.reshape(-1)
    base = x.reshape(-1)
    for j in range(base.size):
        xp = base.copy()
        xm = base.copy()
        xp[j] += h
        xm[j] -= h
        flat[j] = (f(xp.reshape(x.shape)) - f(xm.reshape(x.shape))) / (2 * h)
    return grad


def block_interactions(n_blocks=2, users_per_block=15, items_per_block=15):
    """Complete within-block bipartite interactions; blocks never mix."""
    rows = []
    for b in range(n_blocks):
        for u in range(users_per_block):
            for i in range(items_per_block):
                rows.append(RawInteraction(f"u{b}_{u:02d}", f"i{b}_{i:02d}"))
    return rows


def random_bipartite_dataset(n_users=4, n_items=4, seed=0, min_user_deg=2):
    """Random connected-ish bipartite train graph, no held-out splits."""
    rng = np.random.default_rng(seed)
    pairs = set()
    for u in range(n_users):
        for i in rng.choice(n_items, size=min_user_deg, replace=False):
            pairs.add((u, int(i)))
    for i in range(n_items):
        if not any(p[1] == i for p in pairs):
            pairs.add((int(rng.integers(n_users)), i))
    return InteractionDataset.from_parts(n_users, n_items, sorted(pairs), {}, {})


def one_heldout_dataset(users_per_block=10, items_per_block=10):
    """Two complete blocks where every user has exactly one held-out item.

    The first half of each block's users hold their item in validation, the
    second half in test, so each evaluated user has exactly one unseen
    in-block item and perfect training drives Recall@1 to 1.0.
    """
    n_blocks = 2
    n_users = n_blocks * users_per_block
    n_items = n_blocks * items_per_block
    train, validation, test = [], {}, {}
    for b in range(n_blocks):
        items = [b * items_per_block + i for i in range(items_per_block)]
        for k in range(users_per_block):
            u = b * users_per_block + k
            held = items[k % items_per_block]
            train.extend((u, i) for i in items if i != held)
            if k < users_per_block // 2:
                validation[u] = {held}
            else:
                test[u] = {held}
    return InteractionDataset.from_parts(n_users, n_items, train, validation, test)


def small_params(name, **overrides):
    """Model parameters sized for desk-scale gradient checks."""
    extras = {
        "lightgcn": {},
        "sgl": dict(ssl_weight=0.2, temperature=0.3, dropout=0.2),
        "simgcl": dict(ssl_weight=0.2, temperature=0.3, noise=0.1),
        "directau": dict(gamma=0.8),
    }[name]
    kwargs = dict(layers=2, dim=4, reg=1e-2)
    kwargs.update(extras)
    kwargs.update(overrides)
    return ModelParams(name=name, **kwargs)


def random_batch(dataset, size, seed):
    """A batch of (user, positive, negative) rows drawn from train pairs."""
    rng = np.random.default_rng(seed)
    users = rng.integers(0, dataset.n_users, size=size)
    pos = np.array([sorted(dataset.train_sets[int(u)])[0] for u in users])
    neg = np.array([
        next(i for i in range(dataset.n_items) if i not in dataset.train_sets[int(u)])
        for u in users
    ])
    return Batch(users, pos, neg)


def model_fd_check(params, seed, n_users=4, n_items=4, batch_size=6, h=1e-5):
    """Max elementwise relative error between cal_loss's analytic gradient and
    central finite differences of the replayed total loss."""
    dataset = random_bipartite_dataset(n_users, n_items, seed=seed)
    n_nodes = dataset.n_users + dataset.n_items
    e0 = EmbeddingTable.init_uniform(n_nodes, params.dim, [seed, 5]).matrix
    raw = dataset.raw_bipartite if params.name == "sgl" else None
    views = sample_epoch_views(params, raw, np.random.default_rng([seed, 11]))
    batch = random_batch(dataset, batch_size, seed)
    if params.name == "directau":
        batch = Batch(batch.users, batch.pos_items, None)
    fwd = forward(params, e0, dataset.adjacency, dataset.n_users, views)
    _, grad = cal_loss(params, fwd, batch)

    def loss_at(e):
        replayed = forward_replay(params, fwd.cache, e)
        lv, _ = cal_loss(params, replayed, batch)
        return lv.total

    fd = fd_gradient(loss_at, e0, h=h)
    return float(rel_err(fd, grad).max())
