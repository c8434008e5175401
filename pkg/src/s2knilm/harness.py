"""Experiment orchestration behind the command line.

Every entry point takes a :class:`RunConfig` and writes its artifacts under
``config.out``. Artifacts are deterministic for a fixed config: JSON is
written with sorted keys, floats with full precision, and nothing depends on
wall-clock time or worker count.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .dataio import (
    ChannelTable,
    DatasetSchema,
    SplitPlan,
    build_dictionary,
    load_channel_csv,
    load_dictionary,
    make_splits,
    save_dictionary,
)
from .disaggregators import (
    DEFAULT_BETA,
    DEFAULT_OFF_THRESHOLD_PCEC,
    ElasticNetConfig,
    LassoConfig,
    MethodConfig,
    S2kConfig,
    Stage,
    detect_off_devices,
    disaggregate,
    hierarchical_disaggregate,
)
from .metrics import MetricScaling, device_energy, evaluate
from .model import ConfigError, DisaggregationResult, GroupedDictionary, Normalization, SignalMatrix, StructureError
from .nnls import DEFAULT_TOL

__all__ = [
    "METHODS",
    "METHOD_PARAMS",
    "RunConfig",
    "RunOutcome",
    "parse_method",
    "parse_split",
    "split_label",
    "method_config",
    "run_build_dict",
    "run_disaggregate",
    "run_crossval",
    "run_hierarchical",
]

METHODS = ("s2k", "lasso", "elastic_net")
METHOD_PARAMS = {"s2k": {"beta"}, "lasso": {"beta1"}, "elastic_net": {"beta1", "beta2"}}


def parse_method(name: str) -> str:
    key = str(name).strip().lower().replace("-", "_")
    if key not in METHODS:
        raise ConfigError(f"unknown method {name!r}; choose from s2k, lasso, elastic-net")
    return key


def parse_split(value) -> float:
    """Training fraction from ``0.8``, ``80``, ``"80/20"`` or ``"80-20"``."""
    text = str(value).strip()
    for sep in ("/", "-"):
        if sep in text:
            left, _, right = text.partition(sep)
            try:
                a, b = float(left), float(right)
            except ValueError:
                raise ConfigError(f"bad split {value!r}") from None
            if a <= 0 or b <= 0:
                raise ConfigError(f"bad split {value!r}")
            return a / (a + b)
    try:
        x = float(text)
    except ValueError:
        raise ConfigError(f"bad split {value!r}") from None
    frac = x / 100.0 if x > 1 else x
    if not 0 < frac < 1:
        raise ConfigError(f"split {value!r} is not a training fraction in (0, 1)")
    return frac


def split_label(fraction: float) -> str:
    train = int(round(fraction * 100))
    return f"{train}-{100 - train}"


@dataclass(frozen=True)
class RunConfig:
    """Everything a run needs. Relative paths resolve against ``base_dir``.

    ``methods`` holds one entry for ``disaggregate``/``hierarchical`` and any
    subset for ``crossval``. ``beta``/``beta1``/``beta2`` left as ``None``
    take each method's default; setting one that none of the selected
    methods uses is an error.
    """

    data: str | None = None
    schema: str | None = None
    stage2_schema: str | None = None
    stage2_data: str | None = None
    dictionary: str | None = None
    out: str = "out"
    methods: tuple[str, ...] = ("s2k",)
    beta: float | None = None
    beta1: float | None = None
    beta2: float | None = None
    normalization: Normalization = Normalization.NONE
    splits: tuple[float, ...] = (0.8,)
    folds: int = 1
    split_mode: str = "random"
    seed: int = 0
    workers: int = field(default_factory=lambda: os.cpu_count() or 1)
    test_days: tuple[str, ...] | None = None
    metric_scaling: MetricScaling = MetricScaling.RAW
    off_threshold_pcec: float = DEFAULT_OFF_THRESHOLD_PCEC
    tol: float = DEFAULT_TOL
    max_iter: int | None = None
    base_dir: str = "."

    def __post_init__(self) -> None:
        methods = tuple(dict.fromkeys(parse_method(m) for m in self.methods))
        if not methods:
            raise ConfigError("no method selected")
        object.__setattr__(self, "methods", methods)
        object.__setattr__(self, "splits", tuple(parse_split(s) for s in self.splits))
        object.__setattr__(self, "normalization", Normalization.parse(self.normalization))
        object.__setattr__(self, "metric_scaling", MetricScaling(self.metric_scaling))
        if not self.splits:
            raise ConfigError("no train/test split given")
        if self.split_mode not in ("random", "kfold"):
            raise ConfigError(f"split_mode must be 'random' or 'kfold', got {self.split_mode!r}")
        if self.folds < 1:
            raise ConfigError("folds must be at least 1")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        used = set().union(*(METHOD_PARAMS[m] for m in methods))
        for name in ("beta", "beta1", "beta2"):
            if getattr(self, name) is not None and name not in used:
                raise ConfigError(f"{name} does not apply to method(s) {', '.join(methods)}")
        if self.test_days is not None:
            object.__setattr__(self, "test_days", tuple(str(d) for d in self.test_days))
        for m in methods:
            method_config(self, m)  # validates parameter ranges

    @classmethod
    def from_dict(cls, raw: Mapping, base_dir: str | Path = ".") -> "RunConfig":
        raw = dict(raw)
        names = {f.name for f in dataclasses.fields(cls)} | {"method"}
        unknown = set(raw) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "method" in raw:
            if "methods" in raw:
                raise ConfigError("give either 'method' or 'methods', not both")
            raw["methods"] = [raw.pop("method")]
        for key in ("methods", "splits", "test_days"):
            if key in raw and raw[key] is not None:
                value = raw[key]
                raw[key] = tuple(value) if isinstance(value, (list, tuple)) else (value,)
        raw.setdefault("base_dir", str(base_dir))
        try:
            return cls(**raw)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        return cls.from_dict(raw, base_dir=path.parent)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def path(self, value: str | None, what: str) -> Path:
        if value is None:
            raise ConfigError(f"config is missing {what!r}")
        p = Path(value)
        return p if p.is_absolute() else Path(self.base_dir) / p

    @property
    def out_dir(self) -> Path:
        return self.path(self.out, "out")

    def to_dict(self) -> dict:
        """The run parameters echoed into reports. Paths, worker count and
        output location are left out so reports only depend on what was
        computed."""
        return {
            "methods": list(self.methods),
            "beta": self.beta,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "normalization": self.normalization.value,
            "splits": [split_label(s) for s in self.splits],
            "train_fractions": list(self.splits),
            "folds": self.folds,
            "split_mode": self.split_mode,
            "seed": self.seed,
            "test_days": None if self.test_days is None else list(self.test_days),
            "metric_scaling": self.metric_scaling.value,
            "off_threshold_pcec": self.off_threshold_pcec,
            "tol": self.tol,
            "max_iter": self.max_iter,
        }


def method_config(config: RunConfig, method: str) -> MethodConfig:
    solver = {"tol": config.tol, "max_iter": config.max_iter, "workers": config.workers}
    try:
        if method == "s2k":
            beta = DEFAULT_BETA if config.beta is None else config.beta
            return S2kConfig(beta=beta, off_threshold_pcec=config.off_threshold_pcec, **solver)
        if method == "lasso":
            return LassoConfig(**({} if config.beta1 is None else {"beta1": config.beta1}), **solver)
        params = {k: getattr(config, k) for k in ("beta1", "beta2") if getattr(config, k) is not None}
        return ElasticNetConfig(**params, **solver)
    except ValueError as exc:
        raise ConfigError(f"{method}: {exc}") from None


@dataclass(frozen=True)
class RunOutcome:
    """What a command produced: files written, lines for the console, and
    whether every solve converged."""

    files: tuple[Path, ...]
    messages: tuple[str, ...] = ()
    converged: bool = True
    failed: bool = False

    @property
    def exit_code(self) -> int:
        if self.failed:
            return 2
        return 0 if self.converged else 1


# ----------------------------------------------------------------- writers


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> Path:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def _write_json(path: Path, payload) -> Path:
    path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")
    return path


def _write_estimates(directory: Path, result: DisaggregationResult, sample_period: float) -> list[Path]:
    """One plot-ready CSV per device: seconds since local midnight, then one
    column per test day."""
    directory.mkdir(parents=True, exist_ok=True)
    files = []
    for dev, est in zip(result.device_ids, result.per_device):
        labels = est.window_labels or tuple(f"window{j}" for j in range(est.d))
        offsets = np.arange(est.m) * sample_period
        rows = [[int(t)] + list(est.values[i]) for i, t in enumerate(offsets)]
        files.append(_write_csv(directory / f"{dev}.csv", ["seconds"] + list(labels), rows))
    return files


def _write_activations(path: Path, result: DisaggregationResult, dictionary: GroupedDictionary) -> Path:
    labels = result.per_device[0].window_labels or tuple(f"window{j}" for j in range(result.activations.d))
    col_labels = dictionary.column_labels or tuple(f"col{t}" for t in range(dictionary.T))
    owner = [g.device_id for g in dictionary.groups for _ in range(g.column_count)]
    rows = [[owner[t], col_labels[t]] + list(result.activations.values[t]) for t in range(dictionary.T)]
    return _write_csv(path, ["device_id", "column"] + list(labels), rows)


# ----------------------------------------------------------------- helpers


def _load_dataset(config: RunConfig, data_key: str = "data", schema_key: str = "schema"):
    schema = DatasetSchema.load(config.path(getattr(config, schema_key), schema_key))
    table = load_channel_csv(config.path(getattr(config, data_key), data_key), schema)
    if table.day_count == 0:
        raise ConfigError("data holds no complete day")
    return schema, table


def _day_indices(table: ChannelTable, wanted: Sequence[str]) -> list[int]:
    index = {label: j for j, label in enumerate(table.day_labels)}
    out = []
    for w in wanted:
        if w in index:
            out.append(index[w])
        elif w.lstrip("-").isdigit() and 0 <= int(w) < table.day_count:
            out.append(int(w))
        else:
            raise ConfigError(f"test day {w!r} is neither a day label nor an index in [0, {table.day_count})")
    return out


def _require_aggregate(schema: DatasetSchema, table: ChannelTable) -> str:
    channel = schema.aggregate_channel
    if channel is None:
        raise ConfigError("schema names no aggregate channel; the solver needs one")
    if channel not in table.channels:
        raise ConfigError(f"aggregate channel {channel!r} is not in the data")
    return channel


def _truth(schema: DatasetSchema, table: ChannelTable, days: Sequence[int]) -> list[SignalMatrix] | None:
    if not all(c in table.channels for c in schema.device_channels):
        return None
    return [table.day_matrix(c, days, schema.unit) for c in schema.device_channels]


def _plan(config: RunConfig, day_count: int, fraction: float) -> SplitPlan:
    try:
        return make_splits(day_count, fraction, config.folds, config.seed, config.split_mode)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _dictionary(schema: DatasetSchema, table: ChannelTable, train_days, normalization) -> GroupedDictionary:
    with warnings.catch_warnings():
        # all-zero training days are expected for devices that were OFF
        warnings.simplefilter("ignore")
        return build_dictionary(table, schema.device_channels, train_days, normalization, schema.device_ids)


def _evaluation(schema, table, days, result, config, aggregate):
    truth = _truth(schema, table, days)
    if truth is None:
        return None
    flags = detect_off_devices(result, config.off_threshold_pcec).flags
    return evaluate(truth, result.per_device, schema.device_ids, flags, config.metric_scaling, aggregate)


def _pcec_rows(report) -> list[dict]:
    return [
        {"device_id": dev, "pcec_estimated": list(report.pcec_estimated[i]), "pcec_ground_truth": list(report.pcec_ground_truth[i])}
        for i, dev in enumerate(report.device_ids)
    ]


def _share(signals: Sequence[SignalMatrix]) -> np.ndarray:
    """Each device's percentage of the total energy over all windows."""
    energy = device_energy(signals).sum(axis=1)
    total = energy.sum()
    return 100.0 * energy / total if total > 0 else np.zeros_like(energy)


# ----------------------------------------------------------------- commands


def run_build_dict(config: RunConfig) -> RunOutcome:
    """Build the dictionary from fold 0 of the first split and save it."""
    schema, table = _load_dataset(config)
    missing = [c for c in schema.device_channels if c not in table.channels]
    if missing:
        raise ConfigError(f"device channels missing from the data: {missing}")
    plan = _plan(config, table.day_count, config.splits[0])
    train = plan.train_days[0]
    dictionary = _dictionary(schema, table, train, config.normalization)
    out = config.out_dir / "dictionary"
    extra = {
        "train_days": [table.day_labels[j] for j in train],
        "test_days": [table.day_labels[j] for j in plan.test_days[0]],
        "split": split_label(config.splits[0]),
        "seed": config.seed,
        "measurement": schema.measurement,
    }
    save_dictionary(out, dictionary, extra)
    sizes = " ".join(f"{d}={n}" for d, n in zip(dictionary.device_ids, dictionary.group_sizes))
    return RunOutcome(
        files=(out / "bases.csv", out / "manifest.json"),
        messages=(f"k={dictionary.k}, T={dictionary.T}", f"group sizes: {sizes}"),
    )


def _dictionary_dir(config: RunConfig) -> Path:
    if config.dictionary is not None:
        return config.path(config.dictionary, "dictionary")
    return config.out_dir / "dictionary"


def run_disaggregate(config: RunConfig) -> RunOutcome:
    """Disaggregate the test days with a saved dictionary.

    Only the aggregate channel reaches the solver. Device channels, when
    present, are read afterwards to score the estimates.
    """
    if len(config.methods) != 1:
        raise ConfigError("disaggregate runs exactly one method")
    method = config.methods[0]
    dictionary, manifest = load_dictionary(_dictionary_dir(config))
    schema, table = _load_dataset(config)
    agg_channel = _require_aggregate(schema, table)
    if table.samples_per_day != dictionary.m:
        raise StructureError(
            f"dictionary has m={dictionary.m} samples per day but the data has m={table.samples_per_day}"
        )
    if config.test_days is not None:
        days = _day_indices(table, config.test_days)
    else:
        trained = set(manifest.get("train_days", ()))
        days = [j for j, label in enumerate(table.day_labels) if label not in trained]
        if not days:
            raise ConfigError("every day in the data was used for training; set test_days")

    X = table.day_matrix(agg_channel, days, schema.unit)
    result = disaggregate(dictionary, X, method_config(config, method))

    out = config.out_dir
    out.mkdir(parents=True, exist_ok=True)
    files = _write_estimates(out / "estimates", result, table.sample_period)
    files.append(_write_activations(out / "activations.csv", result, dictionary))
    messages = []
    off = detect_off_devices(result, config.off_threshold_pcec)
    payload = {
        "config": config.to_dict(),
        "method": method,
        "params": result.params,
        "test_days": list(X.window_labels),
        "converged": result.diagnostics.converged,
        "iterations": result.diagnostics.iterations,
        "residual_fro_sq": result.residual_fro_sq,
        "group_sums": {d: result.group_sums[i] for i, d in enumerate(result.device_ids)},
        "off_devices": [sorted(s) for s in off.per_column()],
        "notes": list(off.notes),
    }
    report = _evaluation(schema, table, days, result, config, X)
    if report is None:
        messages.append("no ground-truth device channels in the data; evaluation report omitted")
        payload["report"] = None
    else:
        payload["report"] = report.to_dict()
        messages.append(f"DE={report.disaggregation_error:.6g}")
    files.append(_write_json(out / "metrics.json", payload))
    if not result.converged:
        bad = [X.window_labels[j] for j in np.flatnonzero(~result.diagnostics.converged)]
        messages.append(f"solver did not converge on {bad}")
    return RunOutcome(tuple(files), tuple(messages), converged=result.converged)


def _fold(schema, table, train, test, method, config, agg_channel):
    dictionary = _dictionary(schema, table, train, config.normalization)
    cfg = method_config(config, method)
    outcome = {}
    for phase, days in (("train", train), ("test", test)):
        X = table.day_matrix(agg_channel, days, schema.unit)
        result = disaggregate(dictionary, X, cfg)
        report = _evaluation(schema, table, days, result, config, X)
        if report is None:
            raise ConfigError("crossval needs ground-truth device channels")
        truth = _truth(schema, table, days)
        outcome[phase] = {
            "de": report.disaggregation_error,
            "report": report,
            "converged": result.converged,
            "share_estimated": _share(result.per_device),
            "share_ground_truth": _share(truth),
        }
    outcome["T"] = dictionary.T
    return outcome


def run_crossval(config: RunConfig) -> RunOutcome:
    """All splits x folds x methods, with per-fold and averaged tables.

    A fold that raises stops the run; everything finished so far is still
    written and the summary is marked incomplete.
    """
    schema, table = _load_dataset(config)
    agg_channel = _require_aggregate(schema, table)
    out = config.out_dir
    out.mkdir(parents=True, exist_ok=True)

    plans = {}
    fold_rows, device_rows = [], []
    de: dict[tuple[str, str, str], list[float]] = {}
    converged, error = True, None
    try:
        for fraction in config.splits:
            label = split_label(fraction)
            plan = _plan(config, table.day_count, fraction)
            plans[label] = plan
            for f in range(plan.fold_count):
                train, test = plan.train_days[f], plan.test_days[f]
                for method in config.methods:
                    res = _fold(schema, table, train, test, method, config, agg_channel)
                    ok = res["train"]["converged"] and res["test"]["converged"]
                    converged &= ok
                    fold_rows.append([label, f, method, res["T"], res["train"]["de"], res["test"]["de"], ok])
                    de.setdefault((label, method, "train"), []).append(res["train"]["de"])
                    de.setdefault((label, method, "test"), []).append(res["test"]["de"])
                    rep = res["test"]["report"]
                    for i, dev in enumerate(schema.device_ids):
                        device_rows.append([
                            label, f, method, dev, rep.per_device_rmse[i],
                            res["test"]["share_estimated"][i], res["test"]["share_ground_truth"][i],
                        ])
    except Exception as exc:  # keep partial results, then report
        error = f"{type(exc).__name__}: {exc}"

    files = []
    files.append(_write_csv(
        out / "folds.csv", ["split", "fold", "method", "T", "train_de", "test_de", "converged"], fold_rows
    ))
    files.append(_write_csv(
        out / "devices.csv",
        ["split", "fold", "method", "device_id", "rmse", "pcec_estimated", "pcec_ground_truth"],
        device_rows,
    ))

    def mean(key):
        vals = de.get(key)
        return float(np.mean(vals)) if vals else float("nan")

    labels = [split_label(s) for s in config.splits]
    first = labels[0]
    files.append(_write_csv(
        out / "table_methods.csv",
        ["method", "train_de", "test_de"],
        [[m, mean((first, m, "train")), mean((first, m, "test"))] for m in config.methods],
    ))
    files.append(_write_csv(
        out / "table_splits.csv",
        ["method"] + labels,
        [[m] + [mean((lab, m, "test")) for lab in labels] for m in config.methods],
    ))
    files.append(_write_json(out / "splits.json", {lab: p.to_dict() for lab, p in plans.items()}))
    summary = {
        "config": config.to_dict(),
        "complete": error is None,
        "error": error,
        "days": list(table.day_labels),
        "averages": {
            lab: {m: {"train_de": mean((lab, m, "train")), "test_de": mean((lab, m, "test"))} for m in config.methods}
            for lab in labels
        },
        "converged": converged,
    }
    files.append(_write_json(out / "metrics.json", summary))
    messages = [f"{m}: test DE {mean((first, m, 'test')):.6g} at {first}" for m in config.methods]
    if error is not None:
        messages.append(f"aborted, partial results kept: {error}")
    return RunOutcome(tuple(files), tuple(messages), converged=converged, failed=error is not None)


def run_hierarchical(config: RunConfig) -> RunOutcome:
    """Building -> devices, then the estimated HVAC signal -> its components.

    Both dictionaries are trained on fold 0 of the first split. The stage-2
    data defaults to the stage-1 file.
    """
    if len(config.methods) != 1:
        raise ConfigError("hierarchical runs exactly one method")
    method = config.methods[0]
    schema1, table1 = _load_dataset(config)
    if schema1.hvac_group is None:
        raise ConfigError("stage-1 schema must name an hvac_group")
    agg_channel = _require_aggregate(schema1, table1)
    data2 = "stage2_data" if config.stage2_data is not None else "data"
    schema2, table2 = _load_dataset(config, data2, "stage2_schema")
    if table2.day_labels != table1.day_labels:
        raise ConfigError("stage-1 and stage-2 data cover different days")

    plan = _plan(config, table1.day_count, config.splits[0])
    train, test = plan.train_days[0], plan.test_days[0]
    stage1 = Stage(_dictionary(schema1, table1, train, config.normalization), method_config(config, method))
    stage2 = Stage(_dictionary(schema2, table2, train, config.normalization), method_config(config, method))
    X = table1.day_matrix(agg_channel, test, schema1.unit)
    first, second = hierarchical_disaggregate(stage1, stage2, X, schema1.hvac_group)

    out = config.out_dir
    out.mkdir(parents=True, exist_ok=True)
    files = _write_estimates(out / "stage1" / "estimates", first, table1.sample_period)
    files += _write_estimates(out / "stage2" / "estimates", second, table2.sample_period)
    files.append(_write_activations(out / "stage1" / "activations.csv", first, stage1.dictionary))
    files.append(_write_activations(out / "stage2" / "activations.csv", second, stage2.dictionary))

    off2 = detect_off_devices(second, config.off_threshold_pcec)
    rep1 = _evaluation(schema1, table1, test, first, config, X)
    rep2 = _evaluation(schema2, table2, test, second, config, first.estimate(schema1.hvac_group))
    messages = []
    if rep1 is not None and rep2 is not None:
        files.append(_write_csv(
            out / "table_components.csv",
            ["component", "rmse", "pcec_estimated", "pcec_ground_truth", "off_days"],
            [
                [
                    dev,
                    rep2.per_device_rmse[i],
                    _share(second.per_device)[i],
                    _share(_truth(schema2, table2, test))[i],
                    int(off2.flags[i].sum()),
                ]
                for i, dev in enumerate(schema2.device_ids)
            ],
        ))
        files.append(_write_csv(
            out / "table_stages.csv",
            ["stage", "de"],
            [["DE1", rep1.disaggregation_error], ["DE2", rep2.disaggregation_error]],
        ))
        messages.append(f"DE1={rep1.disaggregation_error:.6g} DE2={rep2.disaggregation_error:.6g}")
    else:
        messages.append("ground-truth channels missing; stage reports omitted")
    payload = {
        "config": config.to_dict(),
        "method": method,
        "hvac_group": schema1.hvac_group,
        "train_days": [table1.day_labels[j] for j in train],
        "test_days": list(X.window_labels),
        "stage1": None if rep1 is None else rep1.to_dict(),
        "stage2": None if rep2 is None else rep2.to_dict(),
        "stage2_off_devices": [sorted(s) for s in off2.per_column()],
        "converged": {"stage1": first.diagnostics.converged, "stage2": second.diagnostics.converged},
    }
    files.append(_write_json(out / "metrics.json", payload))
    ok = first.converged and second.converged
    return RunOutcome(tuple(files), tuple(messages), converged=ok)
