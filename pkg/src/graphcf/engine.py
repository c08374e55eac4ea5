"""Unified trainer and grid tuner.

One training run: per epoch, resample augmentation views, walk the shuffled
train pairs in mini-batches (forward, loss+gradient, sparse Adam step),
evaluate on validation every eval_interval epochs, checkpoint the best
objective, and stop early after `patience` evaluations without improvement.
The final report evaluates the best checkpoint (as saved, i.e. after the
float32 round-trip) on the test split.

Randomness is partitioned into independent streams derived from the run
seed, so e.g. an augmentation that draws nothing cannot shift negative
sampling; a fixed seed makes the whole run bitwise reproducible.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, GraphCFError, NumericError, SamplingError
from .evalkit import EvalReport, batched_full_eval
from .models import (
    Batch,
    EmbeddingTable,
    ForwardCache,
    ForwardOutput,
    ModelParams,
    cal_loss,
    forward,
    load_checkpoint,
    propagate,
    sample_epoch_views,
    save_checkpoint,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainSettings:
    """Trainer knobs; defaults match the documented baseline configuration."""

    lr: float = 1e-3
    batch_size: int = 4096
    max_epochs: int = 300
    eval_interval: int = 3
    patience: int = 10
    cutoffs: tuple[int, ...] = (10, 20, 40)
    user_batch: int = 1024
    objective_metric: str = "recall"
    objective_cutoff: int = 20
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.objective_cutoff not in self.cutoffs:
            raise ConfigError(
                f"objective cutoff {self.objective_cutoff} not among cutoffs {self.cutoffs}"
            )
        if self.seed < 0:
            raise ConfigError("seed must be >= 0")


@dataclass
class TrainState:
    epoch: int
    table: EmbeddingTable
    m: np.ndarray
    v: np.ndarray
    step: int
    best_metric: float = -math.inf
    best_epoch: int = -1
    evals_since_improvement: int = 0
    log: list[dict] = field(default_factory=list)
    best_e0: np.ndarray | None = None


def sample_negatives(train_sets, users, n_items: int, rng: np.random.Generator) -> np.ndarray:
    """One uniform non-interacted item per batch row, by rejection sampling."""
    users = np.asarray(users, dtype=np.int64)
    negs = rng.integers(0, n_items, size=users.size)
    for row, u in enumerate(users):
        owned = train_sets[int(u)]
        if len(owned) >= n_items:
            raise SamplingError(f"user {u} has interacted with every item")
        c = negs[row]
        while int(c) in owned:
            c = rng.integers(0, n_items)
        negs[row] = c
    return negs


def adam_step(
    state: TrainState,
    rows: np.ndarray,
    grads: np.ndarray,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Bias-corrected Adam on the given rows only; other rows keep their moments."""
    if not np.all(np.isfinite(grads)):
        raise NumericError("non-finite gradient passed to adam_step")
    state.step += 1
    t = state.step
    if rows.size == state.m.shape[0]:
        # graph propagation usually touches every row; updating in place
        # skips four full-table gather/scatter copies (same elementwise ops)
        m, v = state.m, state.v
        m *= beta1
        m += (1.0 - beta1) * grads
        v *= beta2
        v += (1.0 - beta2) * (grads * grads)
        target = state.table.matrix
    else:
        m = beta1 * state.m[rows] + (1.0 - beta1) * grads
        v = beta2 * state.v[rows] + (1.0 - beta2) * (grads * grads)
        state.m[rows] = m
        state.v[rows] = v
        target = None
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    update = lr * m_hat / (np.sqrt(v_hat) + eps)
    if not np.all(np.isfinite(update)):
        raise NumericError("non-finite Adam update")
    if target is not None:
        target -= update
    else:
        state.table.matrix[rows] -= update


def _batch_bounds(n: int, batch_size: int) -> list[tuple[int, int]]:
    """Contiguous batch bounds; a trailing singleton folds into the previous
    batch so pairwise losses always see at least two rows."""
    bounds = [(s, min(s + batch_size, n)) for s in range(0, n, batch_size)]
    if len(bounds) > 1 and bounds[-1][1] - bounds[-1][0] == 1:
        s, _ = bounds[-2]
        bounds[-2:] = [(s, n)]
    return bounds


def predict_forward(e0: np.ndarray, adjacency, layers: int, n_users: int) -> ForwardOutput:
    """Clean propagation only: prediction always uses unaugmented embeddings."""
    z, _ = propagate(adjacency, e0, layers)
    cache = ForwardCache(e0=e0, adjacency=adjacency, layers=layers, n_users=n_users)
    return ForwardOutput(z, None, None, cache)


def _checkpoint_meta(params: ModelParams, dataset, settings: TrainSettings, epoch: int) -> dict:
    meta = {
        "model": params.name,
        "layers": params.layers,
        "dim": params.dim,
        "n_users": dataset.n_users,
        "n_items": dataset.n_items,
        "seed": settings.seed,
        "epoch": epoch,
        "lr": settings.lr,
        "batch": settings.batch_size,
        "reg": params.reg,
    }
    for name in ("ssl_weight", "temperature", "dropout", "noise", "gamma"):
        value = getattr(params, name)
        if value is not None:
            meta[name] = value
    return meta


def format_report(lines: dict) -> str:
    return "".join(f"{k}\t{v}\n" for k, v in lines.items())


def train(
    params: ModelParams,
    dataset,
    settings: TrainSettings,
    out_dir=None,
    snapshot: str | None = None,
    quiet: bool = False,
):
    """Run one training job; returns (TrainState, test EvalReport).

    When out_dir is given the run directory receives config.snapshot,
    log.ndjson (one record per evaluation), the best/ checkpoint, and the
    final report.
    """
    n_users, n_items = dataset.n_users, dataset.n_items
    n_nodes = n_users + n_items
    seed = settings.seed
    table = EmbeddingTable.init_uniform(n_nodes, params.dim, [seed, 0])
    state = TrainState(
        epoch=0, table=table,
        m=np.zeros_like(table.matrix), v=np.zeros_like(table.matrix), step=0,
    )
    adjacency = dataset.adjacency
    raw = dataset.raw_bipartite if params.name == "sgl" else None
    train_pairs = dataset.train
    train_sets = dataset.train_sets
    needs_negatives = params.name != "directau"

    run_dir = Path(out_dir) if out_dir is not None else None
    log_fh = None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        if snapshot is not None:
            (run_dir / "config.snapshot").write_text(snapshot, encoding="utf-8")
        log_fh = open(run_dir / "log.ndjson", "w", encoding="utf-8")

    try:
        for epoch in range(1, settings.max_epochs + 1):
            shuffle_rng = np.random.default_rng([seed, 1, epoch])
            neg_rng = np.random.default_rng([seed, 2, epoch])
            view_rng = np.random.default_rng([seed, 3, epoch])
            views = sample_epoch_views(params, raw, view_rng)
            perm = shuffle_rng.permutation(len(train_pairs))
            loss_sums: dict[str, float] = {}
            bounds = _batch_bounds(len(train_pairs), settings.batch_size)
            for lo, hi in bounds:
                picked = train_pairs[perm[lo:hi]]
                users, pos = picked[:, 0], picked[:, 1]
                negs = sample_negatives(train_sets, users, n_items, neg_rng) if needs_negatives else None
                fwd = forward(params, state.table.matrix, adjacency, n_users, views)
                loss, de0 = cal_loss(params, fwd, Batch(users, pos, negs))
                rows = np.flatnonzero(np.any(de0 != 0.0, axis=1))
                adam_step(state, rows, de0[rows], settings.lr)
                for name, value in loss.components.items():
                    loss_sums[name] = loss_sums.get(name, 0.0) + value
            state.epoch = epoch
            mean_loss = {k: v / len(bounds) for k, v in sorted(loss_sums.items())}
            mean_loss["total"] = sum(mean_loss.values())

            if epoch % settings.eval_interval == 0 or epoch == settings.max_epochs:
                fwd_eval = predict_forward(state.table.matrix, adjacency, params.layers, n_users)
                report = batched_full_eval(
                    fwd_eval, dataset, "validation", settings.cutoffs,
                    settings.user_batch, settings.threads, epoch,
                )
                objective = report.metric(settings.objective_metric, settings.objective_cutoff)
                record = {
                    "epoch": epoch,
                    "split": "validation",
                    "loss": mean_loss,
                    "metrics": report.flat(),
                    "objective": objective,
                }
                state.log.append(record)
                if log_fh is not None:
                    log_fh.write(json.dumps(record, sort_keys=True) + "\n")
                    log_fh.flush()
                if not quiet:
                    log.info(
                        "epoch %d loss %.5f %s@%d %.5f", epoch, mean_loss["total"],
                        settings.objective_metric, settings.objective_cutoff, objective,
                    )
                if objective > state.best_metric:
                    state.best_metric = objective
                    state.best_epoch = epoch
                    state.evals_since_improvement = 0
                    state.best_e0 = state.table.matrix.copy()
                    if run_dir is not None:
                        save_checkpoint(
                            run_dir / "best", state.table.matrix,
                            _checkpoint_meta(params, dataset, settings, epoch),
                        )
                else:
                    state.evals_since_improvement += 1
                    if state.evals_since_improvement >= settings.patience:
                        break
    finally:
        if log_fh is not None:
            log_fh.close()

    # evaluate the best checkpoint as persisted: the float32 round-trip makes
    # `eval --checkpoint` reproduce this report exactly
    if run_dir is not None:
        best_e0, _ = load_checkpoint(run_dir / "best")
    else:
        best_e0 = state.best_e0.astype(np.float32).astype(np.float64)
    fwd_best = predict_forward(best_e0, adjacency, params.layers, n_users)
    test_report = batched_full_eval(
        fwd_best, dataset, "test", settings.cutoffs,
        settings.user_batch, settings.threads, state.best_epoch,
    )
    if run_dir is not None:
        lines = {
            "model": params.name,
            "best_epoch": state.best_epoch,
            "objective": f"{settings.objective_metric}@{settings.objective_cutoff}",
            f"validation.{settings.objective_metric}@{settings.objective_cutoff}": repr(state.best_metric),
            "n_test_users": test_report.n_evaluated,
        }
        for key, value in test_report.flat().items():
            lines[f"test.{key}"] = repr(value)
        (run_dir / "report").write_text(format_report(lines), encoding="utf-8")
    return state, test_report


# --- grid search ---------------------------------------------------------


@dataclass(frozen=True)
class TuneGrid:
    """Hyperparameter candidates (insertion-ordered) and the tuning objective."""

    grid: dict[str, list]
    objective_metric: str = "recall"
    objective_cutoff: int = 20

    def __post_init__(self):
        if not self.grid or any(not vals for vals in self.grid.values()):
            raise ConfigError("tune grid must map parameters to nonempty candidate lists")


@dataclass
class TrialResult:
    index: int
    overrides: dict
    objective: float
    status: str  # "ok" or "failed"
    run_dir: str | None = None


def trial_seed(master_seed: int, trial_index: int) -> int:
    """Deterministic per-trial seed derived from (master seed, trial index)."""
    return int(np.random.SeedSequence([master_seed, trial_index]).generate_state(1)[0])


def tune(grid: TuneGrid, run_trial, master_seed: int, out_dir=None):
    """Depth-first grid search over the declared key order.

    run_trial(overrides, seed, trial_dir) -> float objective is invoked once
    per point of the Cartesian product; a failing trial is recorded and
    skipped. Returns (best TrialResult, all TrialResults); ties keep the
    earliest trial.
    """
    keys = list(grid.grid.keys())
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    results: list[TrialResult] = []
    best: TrialResult | None = None
    for index, combo in enumerate(itertools.product(*(grid.grid[k] for k in keys))):
        overrides = dict(zip(keys, combo))
        trial_dir = out / f"trial_{index:03d}" if out is not None else None
        try:
            objective = float(run_trial(overrides, trial_seed(master_seed, index), trial_dir))
            result = TrialResult(index, overrides, objective, "ok",
                                 str(trial_dir) if trial_dir else None)
            if best is None or objective > best.objective:
                best = result
        except GraphCFError as exc:
            log.warning("trial %d failed: %s", index, exc)
            result = TrialResult(index, overrides, math.nan, "failed",
                                 str(trial_dir) if trial_dir else None)
        results.append(result)
    if out is not None:
        header = "trial\t" + "\t".join(keys) + "\tobjective\tstatus\n"
        rows = [
            f"{r.index}\t" + "\t".join(str(r.overrides[k]) for k in keys)
            + f"\t{r.objective!r}\t{r.status}\n"
            for r in results
        ]
        (out / "trials.tsv").write_text(header + "".join(rows), encoding="utf-8")
    if best is None:
        raise ConfigError("every tuning trial failed")
    return best, results
