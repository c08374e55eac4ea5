"""Full-ranking evaluation: Recall@K and NDCG@K over held-out items.

Train items are masked to -inf, ties break by ascending item id, and users
with empty ground truth are excluded from the mean (but counted). Per-user
metric values are computed independently and reduced over the full user
list in one fixed order, so reports are bitwise identical regardless of
user batching or thread count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, EvaluationError
from .models import ForwardOutput, full_predict

METRICS = ("recall", "ndcg")


@dataclass(frozen=True)
class EvalReport:
    """Mean ranking metrics per cutoff for one split."""

    values: dict[str, dict[int, float]]
    split: str
    epoch: int | None
    n_evaluated: int
    n_skipped: int

    def metric(self, name: str, k: int) -> float:
        return self.values[name][k]

    def flat(self) -> dict[str, float]:
        """{"recall@10": ..., "ndcg@10": ...} with deterministic key order."""
        out = {}
        for name in METRICS:
            for k in sorted(self.values[name]):
                out[f"{name}@{k}"] = self.values[name][k]
        return out


def _check_cutoffs(cutoffs) -> tuple[int, ...]:
    cutoffs = tuple(int(k) for k in cutoffs)
    if not cutoffs or any(k < 1 for k in cutoffs):
        raise ConfigError(f"cutoffs must be positive, got {cutoffs}")
    if any(b <= a for a, b in zip(cutoffs, cutoffs[1:])):
        raise ConfigError(f"cutoffs must be strictly ascending, got {cutoffs}")
    return cutoffs


def _top_ranked(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k best scores, ties broken by ascending index.

    Equivalent to a full sort by (-score, index): argpartition preselects,
    then every index tied with the cutoff boundary is re-ranked exactly.
    """
    n = scores.shape[0]
    k = min(k, n)
    if k == n:
        cand = np.arange(n)
    else:
        part = np.argpartition(-scores, k - 1)[:k]
        boundary = scores[part].min()
        cand = np.flatnonzero(scores >= boundary)
    order = np.lexsort((cand, -scores[cand]))
    return cand[order][:k]


def user_metrics(scores: np.ndarray, train_items, ground_truth, cutoffs) -> dict[str, dict[int, float]]:
    """Recall@K and NDCG@K of a single user from raw item scores."""
    cutoffs = _check_cutoffs(cutoffs)
    gt = set(ground_truth)
    if not gt:
        raise EvaluationError("user has no ground-truth items")
    s = np.array(scores, dtype=np.float64)
    train_idx = np.fromiter(train_items, dtype=np.int64, count=-1) if len(train_items) else None
    if train_idx is not None:
        s[train_idx] = -np.inf
    k_max = min(cutoffs[-1], s.shape[0])
    top = _top_ranked(s, k_max)
    hits = np.fromiter((int(i) in gt for i in top), dtype=np.float64, count=len(top))
    discounts = 1.0 / np.log2(np.arange(2, cutoffs[-1] + 2, dtype=np.float64))
    hit_prefix = np.cumsum(hits)
    dcg_prefix = np.cumsum(hits * discounts[:len(top)])
    ideal_prefix = np.cumsum(discounts)
    out: dict[str, dict[int, float]] = {"recall": {}, "ndcg": {}}
    for k in cutoffs:
        kk = min(k, len(top))
        out["recall"][k] = float(hit_prefix[kk - 1] / len(gt))
        idcg = ideal_prefix[min(k, len(gt)) - 1]
        out["ndcg"][k] = float(dcg_prefix[kk - 1] / idcg)
    return out


def rank_eval(scores, train_mask, ground_truth, cutoffs, split: str = "", epoch: int | None = None) -> EvalReport:
    """Mean metrics over users given a (U x N) score matrix.

    train_mask and ground_truth are per-user collections aligned with the
    score rows. Users with empty ground truth are skipped and counted;
    raising only when nobody is evaluable.
    """
    cutoffs = _check_cutoffs(cutoffs)
    scores = np.asarray(scores, dtype=np.float64)
    per_user = []
    n_skipped = 0
    for row in range(scores.shape[0]):
        gt = ground_truth[row]
        if not gt:
            n_skipped += 1
            continue
        per_user.append(user_metrics(scores[row], train_mask[row], gt, cutoffs))
    return _mean_report(per_user, n_skipped, cutoffs, split, epoch)


def _mean_report(per_user, n_skipped, cutoffs, split, epoch) -> EvalReport:
    if not per_user:
        raise EvaluationError(f"no users with ground truth to evaluate ({split or 'split'})")
    values: dict[str, dict[int, float]] = {name: {} for name in METRICS}
    for name in METRICS:
        for k in cutoffs:
            column = np.array([m[name][k] for m in per_user])
            values[name][k] = float(column.sum() / len(per_user))
    return EvalReport(values, split, epoch, len(per_user), n_skipped)


def batched_full_eval(
    fwd: ForwardOutput,
    dataset,
    split: str,
    cutoffs,
    user_batch: int = 1024,
    threads: int = 1,
    epoch: int | None = None,
) -> EvalReport:
    """Evaluate a split by scoring users in fixed ascending-id batches.

    The report is independent of user_batch and thread count: batches only
    bound the size of the dense score block, and per-user results are
    reduced in one pass over the same ascending order.
    """
    cutoffs = _check_cutoffs(cutoffs)
    if user_batch < 1:
        raise ConfigError("user_batch must be >= 1")
    if split in ("val", "validation"):
        held_out = dataset.validation
    elif split == "test":
        held_out = dataset.test
    else:
        raise ConfigError(f"unknown split {split!r}")
    users = sorted(u for u, items in held_out.items() if items)
    n_skipped = len(held_out) - len(users)
    if not users:
        raise EvaluationError(f"split {split!r} has no users with ground truth")
    train_sets = dataset.train_sets
    batches = [users[i:i + user_batch] for i in range(0, len(users), user_batch)]

    def eval_batch(batch_users):
        block = full_predict(fwd, batch_users)
        return [
            user_metrics(block[j], train_sets.get(u, ()), held_out[u], cutoffs)
            for j, u in enumerate(batch_users)
        ]

    if threads > 1 and len(batches) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(eval_batch, batches))
    else:
        chunks = [eval_batch(b) for b in batches]
    per_user = [m for chunk in chunks for m in chunk]
    return _mean_report(per_user, n_skipped, cutoffs, split, epoch)
