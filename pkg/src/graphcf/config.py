"""Experiment configuration: strict parser, schema, defaults, snapshots.

The config syntax is a deliberately small indentation-based subset of the
usual human-readable format: nested mappings, scalars, and flat lists
(inline `[a, b]` or `- item` blocks). No anchors, no includes, no nested
lists. Unknown keys, type mismatches, and out-of-range values are rejected
with the offending key and line; silent typos in hyperparameter names are
the classic reproducibility failure.

parse_config resolves every default; snapshot_text() echoes the resolved
form, and parsing a snapshot yields the identical configuration.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

from .datahub import COLUMN_NAMES
from .engine import TrainSettings, TuneGrid
from .errors import ConfigError
from .evalkit import METRICS
from .models import MODEL_NAMES, ModelParams

_MISSING = object()


@dataclass(frozen=True)
class Node:
    """Parsed value plus the source line it came from (None if synthetic)."""

    value: object
    line: int | None = None


# --- text -> node tree ---------------------------------------------------

_INT_RE = re.compile(r"^[+-]?\d+$")
_FLOAT_RE = re.compile(r"^[+-]?(\d+\.\d*|\.\d+|\d+)([eE][+-]?\d+)?$")
_BARE_RE = re.compile(r"^[A-Za-z0-9_./@+-]+$")
_ESCAPES = {"t": "\t", "n": "\n", "r": "\r", "\\": "\\", '"': '"'}


def _unescape(body: str, line: int) -> str:
    out = []
    i = 0
    while i < len(body):
        ch = body[i]
        if ch == "\\":
            i += 1
            if i >= len(body) or body[i] not in _ESCAPES:
                raise ConfigError(f"bad string escape (line {line})")
            ch = _ESCAPES[body[i]]
        out.append(ch)
        i += 1
    return "".join(out)


def _parse_scalar(tok: str, line: int):
    if tok in ("null", "~"):
        return None
    if tok == "true":
        return True
    if tok == "false":
        return False
    if _INT_RE.match(tok):
        return int(tok)
    if _FLOAT_RE.match(tok):
        return float(tok)
    if tok.startswith('"'):
        if len(tok) < 2 or not tok.endswith('"'):
            raise ConfigError(f"unterminated string (line {line})")
        return _unescape(tok[1:-1], line)
    return tok


def _parse_inline(text: str, line: int):
    if text.startswith("["):
        if not text.endswith("]"):
            raise ConfigError(f"unterminated inline list (line {line})")
        inner = text[1:-1].strip()
        if not inner:
            return []
        return [Node(_parse_scalar(p.strip(), line), line) for p in inner.split(",")]
    return _parse_scalar(text, line)


def _lex(text: str):
    toks = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        if not raw.strip() or raw.lstrip().startswith("#"):
            continue
        body = raw.rstrip()
        stripped = body.lstrip(" ")
        if stripped.startswith("\t"):
            raise ConfigError(f"tab indentation is not allowed (line {lineno})")
        toks.append((len(body) - len(stripped), stripped, lineno))
    return toks


def _expect_dedent(toks, pos, indent):
    if pos < len(toks) and toks[pos][0] > indent:
        raise ConfigError(f"unexpected indentation (line {toks[pos][2]})")


def _parse_list_block(toks, pos, indent):
    items = []
    while pos < len(toks) and toks[pos][0] == indent and toks[pos][1].startswith("-"):
        _, text, line = toks[pos]
        if text == "-" or not text.startswith("- "):
            raise ConfigError(f"list items must be '- value' (line {line})")
        items.append(Node(_parse_scalar(text[2:].strip(), line), line))
        pos += 1
        _expect_dedent(toks, pos, indent)
    return items, pos


def _parse_map_block(toks, pos, indent):
    entries: dict[str, Node] = {}
    while pos < len(toks) and toks[pos][0] == indent:
        _, text, line = toks[pos]
        if text.startswith("- "):
            raise ConfigError(f"list item in mapping context (line {line})")
        key, sep, rest = text.partition(":")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"expected 'key: value' (line {line})")
        if key in entries:
            raise ConfigError(f"duplicate key {key!r} (line {line})")
        rest = rest.strip()
        pos += 1
        if rest:
            entries[key] = Node(_parse_inline(rest, line), line)
            _expect_dedent(toks, pos, indent)
        elif pos < len(toks) and toks[pos][0] > indent:
            child_indent = toks[pos][0]
            if toks[pos][1].startswith("-"):
                value, pos = _parse_list_block(toks, pos, child_indent)
            else:
                value, pos = _parse_map_block(toks, pos, child_indent)
            entries[key] = Node(value, line)
        else:
            entries[key] = Node(None, line)
    return entries, pos


def parse_text(text: str) -> Node:
    """Parse config text into a Node tree; top level must be a mapping."""
    toks = _lex(text)
    if not toks:
        return Node({}, None)
    if toks[0][0] != 0:
        raise ConfigError(f"top level must not be indented (line {toks[0][2]})")
    if toks[0][1].startswith("-"):
        raise ConfigError(f"top level must be a mapping (line {toks[0][2]})")
    entries, pos = _parse_map_block(toks, 0, 0)
    if pos != len(toks):
        raise ConfigError(f"unexpected indentation (line {toks[pos][2]})")
    return Node(entries, toks[0][2])


def _wrap_plain(value) -> Node:
    """Wrap plain python values as a synthetic Node tree (no line info)."""
    if isinstance(value, dict):
        return Node({k: _wrap_plain(v) for k, v in value.items()})
    if isinstance(value, (list, tuple)):
        return Node([_wrap_plain(v) for v in value])
    return Node(value)


# --- node tree -> emitted text --------------------------------------------


def _scalar_repr(value) -> str:
    if value is None:
        return "null"
    if value is True:
        return "true"
    if value is False:
        return "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    s = str(value)
    needs_quotes = (
        not s
        or not _BARE_RE.match(s)
        or s in ("null", "~", "true", "false")
        or _INT_RE.match(s)
        or _FLOAT_RE.match(s)
    )
    if not needs_quotes:
        return s
    escaped = s.replace("\\", "\\\\").replace('"', '\\"')
    escaped = escaped.replace("\t", "\\t").replace("\n", "\\n").replace("\r", "\\r")
    return f'"{escaped}"'


def _emit(plain: dict, indent: int = 0) -> list[str]:
    pad = " " * indent
    lines = []
    for key, value in plain.items():
        if isinstance(value, dict):
            lines.append(f"{pad}{key}:")
            lines.extend(_emit(value, indent + 2))
        elif isinstance(value, (list, tuple)):
            inner = ", ".join(_scalar_repr(v) for v in value)
            lines.append(f"{pad}{key}: [{inner}]")
        else:
            lines.append(f"{pad}{key}: {_scalar_repr(value)}")
    return lines


# --- schema ----------------------------------------------------------------


class _MapReader:
    """Consume a parsed mapping with typed, range-checked, line-aware takes."""

    def __init__(self, entries: dict[str, Node] | None, ctx: str):
        self._entries = dict(entries or {})
        self._ctx = ctx

    def name(self, key: str) -> str:
        return f"{self._ctx}.{key}" if self._ctx else key

    @staticmethod
    def _loc(node: Node) -> str:
        return f" (line {node.line})" if node.line is not None else ""

    def _coerce(self, key, node, kind, nullable):
        value = node.value
        if value is None:
            if nullable:
                return None
            raise ConfigError(f"{self.name(key)} must be a {kind}{self._loc(node)}")
        if isinstance(value, (dict, list)):
            raise ConfigError(f"{self.name(key)} must be a scalar{self._loc(node)}")
        if kind == "int":
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{self.name(key)} must be an integer{self._loc(node)}")
            return value
        if kind == "float":
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{self.name(key)} must be a number{self._loc(node)}")
            return float(value)
        if kind == "str":
            if not isinstance(value, str):
                raise ConfigError(f"{self.name(key)} must be a string{self._loc(node)}")
            return value
        if kind == "bool":
            if not isinstance(value, bool):
                raise ConfigError(f"{self.name(key)} must be true or false{self._loc(node)}")
            return value
        raise AssertionError(kind)

    def has(self, key: str) -> bool:
        return key in self._entries

    def pop_node(self, key: str) -> Node | None:
        return self._entries.pop(key, None)

    def scalar(self, key, kind, default=_MISSING, nullable=False, check=None, desc=""):
        node = self._entries.pop(key, None)
        if node is None:
            if default is _MISSING:
                raise ConfigError(f"missing required key {self.name(key)}")
            return default
        value = self._coerce(key, node, kind, nullable)
        if value is not None and check is not None and not check(value):
            raise ConfigError(f"{self.name(key)} {desc}{self._loc(node)}: got {value!r}")
        return value

    def list(self, key, kind, default=_MISSING, check=None, desc=""):
        node = self._entries.pop(key, None)
        if node is None:
            if default is _MISSING:
                raise ConfigError(f"missing required key {self.name(key)}")
            return default
        if not isinstance(node.value, list):
            raise ConfigError(f"{self.name(key)} must be a list{self._loc(node)}")
        items = [self._coerce(key, item, kind, False) for item in node.value]
        if check is not None and not check(items):
            raise ConfigError(f"{self.name(key)} {desc}{self._loc(node)}: got {items!r}")
        return items

    def submap(self, key) -> "tuple[_MapReader, Node] | tuple[None, None]":
        node = self._entries.pop(key, None)
        if node is None:
            return None, None
        if not isinstance(node.value, dict):
            raise ConfigError(f"{self.name(key)} must be a mapping{self._loc(node)}")
        return _MapReader(node.value, self.name(key)), node

    def raw_items(self):
        return list(self._entries.items())

    def finish(self):
        if self._entries:
            key, node = next(iter(self._entries.items()))
            raise ConfigError(f"unknown key {self.name(key)!r}{self._loc(node)}")


@dataclass(frozen=True)
class DataConfig:
    path: str | None = None
    dir: str | None = None
    columns: tuple[str, ...] = ("user", "item")
    delimiter: str = "\t"
    min_rating: float | None = None
    kcore: int = 10
    ratios: tuple[float, float, float] = (0.7, 0.1, 0.2)
    seed: int = 0


@dataclass(frozen=True)
class TrainSection:
    lr: float = 1e-3
    batch: int = 4096
    max_epochs: int = 300
    eval_interval: int = 3
    patience: int = 10
    reg: float = 1e-4
    objective: str = "recall@20"


@dataclass(frozen=True)
class EvalSection:
    cutoffs: tuple[int, ...] = (10, 20, 40)
    user_batch: int = 1024


# extra hyperparameters each model accepts, with their defaults
_MODEL_EXTRAS = {
    "lightgcn": {},
    "sgl": {"ssl_weight": 0.1, "temperature": 0.2, "dropout": 0.1},
    "simgcl": {"ssl_weight": 0.1, "temperature": 0.2, "noise": 0.1},
    "directau": {"gamma": 1.0},
}

_EXTRA_CHECKS = {
    "ssl_weight": (lambda v: v >= 0, "must be >= 0"),
    "temperature": (lambda v: v > 0, "must be > 0"),
    "dropout": (lambda v: 0 <= v < 1, "must be in [0, 1)"),
    "noise": (lambda v: v > 0, "must be > 0"),
    "gamma": (lambda v: v >= 0, "must be >= 0"),
}

# parameters the tuner may sweep: dotted key -> (kind, check, description)
TUNABLE_PARAMS = {
    "model.layers": ("int", lambda v: v >= 0, "must be >= 0"),
    "model.dim": ("int", lambda v: v >= 1, "must be >= 1"),
    "model.ssl_weight": ("float", *_EXTRA_CHECKS["ssl_weight"]),
    "model.temperature": ("float", *_EXTRA_CHECKS["temperature"]),
    "model.dropout": ("float", *_EXTRA_CHECKS["dropout"]),
    "model.noise": ("float", *_EXTRA_CHECKS["noise"]),
    "model.gamma": ("float", *_EXTRA_CHECKS["gamma"]),
    "train.lr": ("float", lambda v: v > 0, "must be > 0"),
    "train.batch": ("int", lambda v: v >= 1, "must be >= 1"),
    "train.reg": ("float", lambda v: v >= 0, "must be >= 0"),
    "train.max_epochs": ("int", lambda v: v >= 1, "must be >= 1"),
    "train.eval_interval": ("int", lambda v: v >= 1, "must be >= 1"),
    "train.patience": ("int", lambda v: v >= 1, "must be >= 1"),
}

# overridable but not sensible to sweep
_OVERRIDABLE = {"data.seed": ("int", lambda v: v >= 0, "must be >= 0")}


def parse_objective(text: str) -> tuple[str, int]:
    metric, sep, cutoff = text.partition("@")
    if not sep or metric not in METRICS or not _INT_RE.match(cutoff) or int(cutoff) < 1:
        raise ConfigError(
            f"objective must look like 'recall@20' with metric in {METRICS}, got {text!r}"
        )
    return metric, int(cutoff)


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataConfig
    model: ModelParams
    train: TrainSection
    eval: EvalSection
    tune: TuneGrid | None = None
    output: str | None = None

    def as_plain(self) -> dict:
        """Resolved configuration as a nested plain dict (snapshot shape)."""
        model: dict = {"name": self.model.name, "layers": self.model.layers, "dim": self.model.dim}
        for extra in _MODEL_EXTRAS[self.model.name]:
            model[extra] = getattr(self.model, extra)
        plain = {
            "data": {
                "path": self.data.path,
                "dir": self.data.dir,
                "columns": list(self.data.columns),
                "delimiter": self.data.delimiter,
                "min_rating": self.data.min_rating,
                "kcore": self.data.kcore,
                "ratios": list(self.data.ratios),
                "seed": self.data.seed,
            },
            "model": model,
            "train": {
                "lr": self.train.lr,
                "batch": self.train.batch,
                "max_epochs": self.train.max_epochs,
                "eval_interval": self.train.eval_interval,
                "patience": self.train.patience,
                "reg": self.train.reg,
                "objective": self.train.objective,
            },
            "eval": {
                "cutoffs": list(self.eval.cutoffs),
                "user_batch": self.eval.user_batch,
            },
        }
        if self.tune is not None:
            plain["tune"] = {
                "objective": f"{self.tune.objective_metric}@{self.tune.objective_cutoff}",
                "grid": {k: list(v) for k, v in self.tune.grid.items()},
            }
        if self.output is not None:
            plain["output"] = self.output
        return plain

    def snapshot_text(self) -> str:
        return "\n".join(_emit(self.as_plain())) + "\n"

    def with_overrides(self, overrides: dict, drop_tune: bool = False) -> "ExperimentConfig":
        """New config with dotted-key overrides applied and revalidated."""
        plain = self.as_plain()
        if drop_tune:
            plain.pop("tune", None)
        for key, value in overrides.items():
            if key not in TUNABLE_PARAMS and key not in _OVERRIDABLE:
                raise ConfigError(f"{key!r} is not an overridable parameter")
            section, _, leaf = key.partition(".")
            plain[section][leaf] = value
        return build_config(_wrap_plain(plain))

    def train_settings(self, threads: int = 1) -> TrainSettings:
        metric, cutoff = parse_objective(self.train.objective)
        return TrainSettings(
            lr=self.train.lr,
            batch_size=self.train.batch,
            max_epochs=self.train.max_epochs,
            eval_interval=self.train.eval_interval,
            patience=self.train.patience,
            cutoffs=self.eval.cutoffs,
            user_batch=self.eval.user_batch,
            objective_metric=metric,
            objective_cutoff=cutoff,
            seed=self.data.seed,
            threads=threads,
        )


def _build_data(reader: _MapReader | None) -> DataConfig:
    if reader is None:
        return DataConfig()
    cfg = DataConfig(
        path=reader.scalar("path", "str", default=None, nullable=True),
        dir=reader.scalar("dir", "str", default=None, nullable=True),
        columns=tuple(reader.list(
            "columns", "str", default=list(DataConfig.columns),
            check=lambda v: all(c in COLUMN_NAMES for c in v) and len(set(v)) == len(v)
            and "user" in v and "item" in v,
            desc=f"must be distinct names from {COLUMN_NAMES} including user and item",
        )),
        delimiter=reader.scalar("delimiter", "str", default="\t",
                                check=lambda v: len(v) > 0, desc="must be nonempty"),
        min_rating=reader.scalar("min_rating", "float", default=None, nullable=True),
        kcore=reader.scalar("kcore", "int", default=10,
                            check=lambda v: v >= 1, desc="must be >= 1"),
        ratios=tuple(reader.list(
            "ratios", "float", default=list(DataConfig.ratios),
            check=lambda v: len(v) == 3 and all(r > 0 for r in v) and abs(sum(v) - 1.0) <= 1e-9,
            desc="must be three positive fractions summing to 1",
        )),
        seed=reader.scalar("seed", "int", default=0,
                           check=lambda v: v >= 0, desc="must be >= 0"),
    )
    reader.finish()
    return cfg


def _build_model(reader: _MapReader | None, reg: float) -> ModelParams:
    if reader is None:
        raise ConfigError("missing required section 'model'")
    name = reader.scalar("name", "str", check=lambda v: v in MODEL_NAMES,
                         desc=f"must be one of {MODEL_NAMES}")
    layers = reader.scalar("layers", "int", default=2,
                           check=lambda v: v >= 0, desc="must be >= 0")
    dim = reader.scalar("dim", "int", default=64,
                        check=lambda v: v >= 1, desc="must be >= 1")
    extras = {}
    for field_name in ("ssl_weight", "temperature", "dropout", "noise", "gamma"):
        relevant = field_name in _MODEL_EXTRAS[name]
        if not relevant:
            node = reader.pop_node(field_name)
            if node is not None:
                raise ConfigError(
                    f"model.{field_name} is not a parameter of model "
                    f"{name!r}{_MapReader._loc(node)}"
                )
            continue
        check, desc = _EXTRA_CHECKS[field_name]
        extras[field_name] = reader.scalar(
            field_name, "float", default=_MODEL_EXTRAS[name][field_name],
            check=check, desc=desc,
        )
    reader.finish()
    return ModelParams(name=name, layers=layers, dim=dim, reg=reg, **extras)


def _build_train(reader: _MapReader | None) -> TrainSection:
    if reader is None:
        return TrainSection()
    cfg = TrainSection(
        lr=reader.scalar("lr", "float", default=1e-3,
                         check=lambda v: v > 0, desc="must be > 0"),
        batch=reader.scalar("batch", "int", default=4096,
                            check=lambda v: v >= 1, desc="must be >= 1"),
        max_epochs=reader.scalar("max_epochs", "int", default=300,
                                 check=lambda v: v >= 1, desc="must be >= 1"),
        eval_interval=reader.scalar("eval_interval", "int", default=3,
                                    check=lambda v: v >= 1, desc="must be >= 1"),
        patience=reader.scalar("patience", "int", default=10,
                               check=lambda v: v >= 1, desc="must be >= 1"),
        reg=reader.scalar("reg", "float", default=1e-4,
                          check=lambda v: v >= 0, desc="must be >= 0"),
        objective=reader.scalar("objective", "str", default="recall@20"),
    )
    reader.finish()
    parse_objective(cfg.objective)
    return cfg


def _build_eval(reader: _MapReader | None) -> EvalSection:
    if reader is None:
        return EvalSection()
    cfg = EvalSection(
        cutoffs=tuple(reader.list(
            "cutoffs", "int", default=list(EvalSection.cutoffs),
            check=lambda v: len(v) > 0 and all(k >= 1 for k in v)
            and all(b > a for a, b in zip(v, v[1:])),
            desc="must be strictly ascending positive integers",
        )),
        user_batch=reader.scalar("user_batch", "int", default=1024,
                                 check=lambda v: v >= 1, desc="must be >= 1"),
    )
    reader.finish()
    return cfg


def _build_tune(reader: _MapReader | None, node: Node | None,
                model: ModelParams, default_objective: str) -> TuneGrid | None:
    if reader is None:
        return None
    objective = reader.scalar("objective", "str", default=default_objective)
    metric, cutoff = parse_objective(objective)
    grid_reader, grid_node = reader.submap("grid")
    if grid_reader is None:
        raise ConfigError(f"tune section requires a grid{_MapReader._loc(node)}")
    grid: dict[str, list] = {}
    for key, value_node in grid_reader.raw_items():
        full = f"tune.grid.{key}"
        loc = f" (line {value_node.line})" if value_node.line is not None else ""
        if key not in TUNABLE_PARAMS:
            raise ConfigError(f"unknown tunable parameter {key!r}{loc}")
        section, _, leaf = key.partition(".")
        if section == "model" and leaf not in ("layers", "dim") and leaf not in _MODEL_EXTRAS[model.name]:
            raise ConfigError(f"{full}: {leaf!r} is not a parameter of model {model.name!r}{loc}")
        kind, check, desc = TUNABLE_PARAMS[key]
        helper = _MapReader({key: value_node}, "tune.grid")
        values = helper.list(key, kind, check=lambda vs: len(vs) > 0 and all(check(v) for v in vs),
                             desc=f"values {desc}")
        grid[key] = values
    reader.finish()
    return TuneGrid(grid, metric, cutoff)


def build_config(root: Node) -> ExperimentConfig:
    if not isinstance(root.value, dict):
        raise ConfigError("configuration must be a mapping")
    top = _MapReader(root.value, "")
    data_reader, _ = top.submap("data")
    model_reader, _ = top.submap("model")
    train_reader, _ = top.submap("train")
    eval_reader, _ = top.submap("eval")
    tune_reader, tune_node = top.submap("tune")
    output = top.scalar("output", "str", default=None, nullable=True)
    top.finish()

    data = _build_data(data_reader)
    train = _build_train(train_reader)
    eval_cfg = _build_eval(eval_reader)
    model = _build_model(model_reader, train.reg)
    metric, cutoff = parse_objective(train.objective)
    if cutoff not in eval_cfg.cutoffs:
        raise ConfigError(
            f"train.objective cutoff {cutoff} is not in eval.cutoffs {list(eval_cfg.cutoffs)}"
        )
    tune = _build_tune(tune_reader, tune_node, model, train.objective)
    if tune is not None and tune.objective_cutoff not in eval_cfg.cutoffs:
        raise ConfigError(
            f"tune objective cutoff {tune.objective_cutoff} is not in eval.cutoffs"
        )
    return ExperimentConfig(data, model, train, eval_cfg, tune, output)


def parse_config_text(text: str) -> ExperimentConfig:
    return build_config(parse_text(text))


def parse_config(path) -> ExperimentConfig:
    """Parse and fully resolve a configuration file."""
    return parse_config_text(Path(path).read_text(encoding="utf-8"))
