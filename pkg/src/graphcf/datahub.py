"""Interaction data pipeline: load, filter, split, and build the train graph.

Raw interactions come in as delimited text with a declared column layout.
Preprocessing applies low-rating removal and k-core filtering, then a
deterministic per-user split into train/validation/test. The resulting
dataset carries dense ids (items offset by the user count in the graph) and
the symmetric-normalized bipartite adjacency built from train pairs only.
"""

from __future__ import annotations

import hashlib
import logging
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataFormatError, StructuralError
from .sparse import CsrMatrix, from_arrays, normalize_sym

log = logging.getLogger(__name__)

COLUMN_NAMES = ("user", "item", "rating", "timestamp")


@dataclass(frozen=True)
class RawInteraction:
    user_key: str
    item_key: str
    rating: float | None = None
    timestamp: int | None = None


@dataclass(frozen=True)
class ColumnFormat:
    """Declared layout of a delimited interaction file."""

    columns: tuple[str, ...] = ("user", "item")
    delimiter: str = "\t"
    max_malformed_frac: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        unknown = [c for c in self.columns if c not in COLUMN_NAMES]
        if unknown:
            raise ConfigError(f"unknown column name(s): {unknown}")
        if len(set(self.columns)) != len(self.columns):
            raise ConfigError("duplicate column names")
        if "user" not in self.columns or "item" not in self.columns:
            raise ConfigError("column layout must include 'user' and 'item'")
        if not self.delimiter:
            raise ConfigError("delimiter must be nonempty")
        if not 0.0 <= self.max_malformed_frac <= 1.0:
            raise ConfigError("max_malformed_frac must be in [0, 1]")


def load_interactions(path, fmt: ColumnFormat) -> list[RawInteraction]:
    """Parse one interaction per data line; blank lines and '#' lines skipped.

    Malformed rows (wrong field count, empty keys, unparsable rating or
    timestamp) are counted and reported; more than max_malformed_frac of the
    data rows malformed raises DataFormatError instead of silently dropping.
    """
    idx = {name: i for i, name in enumerate(fmt.columns)}
    rows: list[RawInteraction] = []
    malformed = 0
    total = 0
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            total += 1
            fields = line.split(fmt.delimiter)
            if len(fields) != len(fmt.columns):
                malformed += 1
                continue
            user = fields[idx["user"]].strip()
            item = fields[idx["item"]].strip()
            rating = timestamp = None
            try:
                if "rating" in idx:
                    rating = float(fields[idx["rating"]])
                if "timestamp" in idx:
                    timestamp = int(fields[idx["timestamp"]])
            except ValueError:
                malformed += 1
                continue
            if not user or not item:
                malformed += 1
                continue
            rows.append(RawInteraction(user, item, rating, timestamp))
    if total and malformed / total > fmt.max_malformed_frac:
        raise DataFormatError(
            f"{path}: {malformed} of {total} rows malformed "
            f"(threshold {fmt.max_malformed_frac:.2%})"
        )
    if malformed:
        log.warning("%s: skipped %d malformed of %d rows", path, malformed, total)
    return rows


def filter_low_rating(interactions, min_rating: float) -> list[RawInteraction]:
    """Keep rows rated at least min_rating; unrated rows pass (implicit data)."""
    return [r for r in interactions if r.rating is None or r.rating >= min_rating]


def kcore_filter(interactions, k: int) -> list[RawInteraction]:
    """Iteratively drop users and items with fewer than k rows until stable.

    The fixpoint is the unique maximal subset where every surviving user and
    item keeps degree >= k; the result can be empty.
    """
    if k < 1:
        raise ConfigError(f"k-core threshold must be >= 1, got {k}")
    rows = list(interactions)
    while rows:
        user_deg = Counter(r.user_key for r in rows)
        item_deg = Counter(r.item_key for r in rows)
        bad_users = {u for u, c in user_deg.items() if c < k}
        bad_items = {i for i, c in item_deg.items() if c < k}
        if not bad_users and not bad_items:
            break
        rows = [r for r in rows if r.user_key not in bad_users and r.item_key not in bad_items]
    return rows


def _largest_remainder_counts(n: int, ratios) -> list[int]:
    """Split n into integer parts proportional to ratios; ties favor earlier parts."""
    raw = [n * r for r in ratios]
    base = [int(x) for x in raw]
    remainders = [x - b for x, b in zip(raw, base)]
    leftover = n - sum(base)
    for j in sorted(range(len(ratios)), key=lambda j: (-remainders[j], j))[:leftover]:
        base[j] += 1
    return base


@dataclass
class InteractionDataset:
    """Dense-id dataset with train pairs, held-out maps, and the train graph.

    Node id of user u is u; node id of item i is n_users + i. The adjacency
    is the symmetric normalization of the bipartite graph over train pairs
    only.
    """

    n_users: int
    n_items: int
    train: np.ndarray                 # (n, 2) int64, sorted by (user, item)
    validation: dict[int, set[int]]
    test: dict[int, set[int]]
    adjacency: CsrMatrix
    user_keys: list[str] = field(default_factory=list)
    item_keys: list[str] = field(default_factory=list)

    @classmethod
    def from_parts(cls, n_users, n_items, train_pairs, validation, test,
                   user_keys=None, item_keys=None) -> "InteractionDataset":
        train = np.asarray(sorted(map(tuple, train_pairs)), dtype=np.int64).reshape(-1, 2)
        if train.size and not (
            0 <= train[:, 0].min() and train[:, 0].max() < n_users
            and 0 <= train[:, 1].min() and train[:, 1].max() < n_items
        ):
            raise StructuralError("train pair ids out of range")
        for mapping in (validation, test):
            for u, items in mapping.items():
                if not 0 <= u < n_users or any(not 0 <= i < n_items for i in items):
                    raise StructuralError(f"held-out ids out of range for user {u}")
        adjacency = _normalized_bipartite(n_users, n_items, train)
        return cls(n_users, n_items, train,
                   {u: set(v) for u, v in validation.items() if v},
                   {u: set(v) for u, v in test.items() if v},
                   adjacency, user_keys or [], item_keys or [])

    @cached_property
    def raw_bipartite(self) -> CsrMatrix:
        """Unnormalized symmetric train graph, for augmentation operators."""
        return _raw_bipartite(self.n_users, self.n_items, self.train)

    @cached_property
    def train_sets(self) -> dict[int, set[int]]:
        """Per-user train item sets (negative-sampling and evaluation masks)."""
        sets: dict[int, set[int]] = {u: set() for u in range(self.n_users)}
        for u, i in self.train:
            sets[int(u)].add(int(i))
        return sets


def _raw_bipartite(n_users: int, n_items: int, train: np.ndarray) -> CsrMatrix:
    n = n_users + n_items
    if len(train) == 0:
        raise StructuralError("train set is empty")
    u = train[:, 0]
    i = n_users + train[:, 1]
    ones = np.ones(len(train))
    return from_arrays(n, n, np.concatenate([u, i]), np.concatenate([i, u]),
                       np.concatenate([ones, ones]))


def _normalized_bipartite(n_users: int, n_items: int, train: np.ndarray) -> CsrMatrix:
    return normalize_sym(_raw_bipartite(n_users, n_items, train))


def build_adjacency(dataset: InteractionDataset) -> CsrMatrix:
    """Symmetric-normalized (M+N)^2 adjacency over the dataset's train pairs."""
    return _normalized_bipartite(dataset.n_users, dataset.n_items, dataset.train)


def split_dataset(interactions, ratios, seed: int) -> InteractionDataset:
    """Deduplicate, assign dense ids over sorted keys, and split per user.

    Each user's items are shuffled with a stream derived from (seed, user id)
    and partitioned by the ratios with largest-remainder rounding; users with
    fewer than 3 interactions keep everything in train so no evaluated user
    has an empty profile.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must be three positive values summing to 1, got {ratios}")
    if seed < 0:
        raise ConfigError("split seed must be >= 0")
    pairs = sorted({(r.user_key, r.item_key) for r in interactions})
    if not pairs:
        raise StructuralError("cannot split an empty interaction set")
    user_keys = sorted({u for u, _ in pairs})
    item_keys = sorted({i for _, i in pairs})
    uid = {k: n for n, k in enumerate(user_keys)}
    iid = {k: n for n, k in enumerate(item_keys)}
    by_user: dict[int, list[int]] = {}
    for u_key, i_key in pairs:
        by_user.setdefault(uid[u_key], []).append(iid[i_key])

    train: list[tuple[int, int]] = []
    validation: dict[int, set[int]] = {}
    test: dict[int, set[int]] = {}
    for u in sorted(by_user):
        items = sorted(by_user[u])
        if len(items) < 3:
            train.extend((u, i) for i in items)
            continue
        order = np.random.default_rng([seed, u]).permutation(len(items))
        shuffled = [items[j] for j in order]
        n_train, n_val, _ = _largest_remainder_counts(len(items), ratios)
        train.extend((u, i) for i in shuffled[:n_train])
        val_part = shuffled[n_train:n_train + n_val]
        test_part = shuffled[n_train + n_val:]
        if val_part:
            validation[u] = set(val_part)
        if test_part:
            test[u] = set(test_part)
    return InteractionDataset.from_parts(
        len(user_keys), len(item_keys), train, validation, test, user_keys, item_keys
    )


# --- dataset directory format ------------------------------------------------
#
# meta            key<TAB>value text (counts plus whatever the caller records)
# train.tsv       user<TAB>item dense-id pairs, sorted
# val.tsv
# test.tsv


def write_dataset(dataset: InteractionDataset, out_dir, extra_meta: dict | None = None) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n_val = sum(len(v) for v in dataset.validation.values())
    n_test = sum(len(v) for v in dataset.test.values())
    meta = {
        "n_users": dataset.n_users,
        "n_items": dataset.n_items,
        "n_train": len(dataset.train),
        "n_val": n_val,
        "n_test": n_test,
    }
    meta.update(extra_meta or {})
    with open(out / "meta", "w", encoding="utf-8") as fh:
        for key, value in meta.items():
            fh.write(f"{key}\t{value}\n")
    np.savetxt(out / "train.tsv", dataset.train, fmt="%d", delimiter="\t")
    for name, mapping in (("val.tsv", dataset.validation), ("test.tsv", dataset.test)):
        with open(out / name, "w", encoding="utf-8") as fh:
            for u in sorted(mapping):
                for i in sorted(mapping[u]):
                    fh.write(f"{u}\t{i}\n")


def read_meta(path) -> dict[str, str]:
    meta = {}
    with open(Path(path) / "meta", "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line:
                key, _, value = line.partition("\t")
                meta[key] = value
    return meta


def load_dataset(path) -> InteractionDataset:
    """Load a preprocessed dataset directory written by write_dataset."""
    path = Path(path)
    meta = read_meta(path)
    try:
        n_users = int(meta["n_users"])
        n_items = int(meta["n_items"])
    except (KeyError, ValueError) as exc:
        raise DataFormatError(f"{path}: meta lacks valid n_users/n_items") from exc

    def read_pairs(name):
        pairs = []
        with open(path / name, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                u, _, i = line.partition("\t")
                pairs.append((int(u), int(i)))
        return pairs

    def to_map(pairs):
        mapping: dict[int, set[int]] = {}
        for u, i in pairs:
            mapping.setdefault(u, set()).add(i)
        return mapping

    return InteractionDataset.from_parts(
        n_users, n_items, read_pairs("train.tsv"),
        to_map(read_pairs("val.tsv")), to_map(read_pairs("test.tsv")),
    )


def file_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()
