"""Experiment orchestration: dataset builds, stratified splits, sweeps.

A run is fully determined by an ExperimentConfig plus its seed: every stage
(dataset generation, splitting, training) draws its own seed from the global
one through a fixed derivation, so sweep cells can execute in any order (or
in parallel, capped by SWEC_THREADS) and still assemble the same tables, and
two executions of the same comparison write byte-identical artifacts.

Within one comparison cell every method trains and evaluates on the same
train/test index sets and the same extracted features; the split fingerprint
recorded per row makes that checkable after the fact.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import baselines, metrics, synthgrid, tinycnn
from .featpipe import FeatureMatrix, featurize
from .synthgrid import (ConfigError, Dataset, DatasetConfig, DatasetGrids,
                        MONITORED_BUSES, build_dataset, extract_window)

DEFAULT_BUS_SUBSETS = (
    (675,), (671,), (632,),
    (632, 671), (671, 675), (632, 675),
    (632, 671, 675),
)
DEFAULT_FS_LIST = (1250.0, 2500.0, 5000.0, 10000.0, 20000.0)
METHODS = ("autoencoder", "svm", "tmlp", "cnn")

_STAGE_DATASET = 1
_STAGE_SPLIT = 2
_STAGE_TRAIN = 3


class PipelineError(RuntimeError):
    """Stage failure wrapper; str(err) names the failing stage."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}': {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    fs_list: tuple = DEFAULT_FS_LIST
    placement_fs: float = 20000.0
    bus_subsets: tuple = DEFAULT_BUS_SUBSETS
    train_fraction: float = 0.8
    snr_db: float = synthgrid.DEFAULT_SNR_DB
    duration: float = synthgrid.DEFAULT_DURATION
    event_time: float = synthgrid.DEFAULT_EVENT_TIME
    amplitude: float = 1.0
    jitter: bool = True
    methods: tuple = METHODS
    repeats: int = 3
    num_intervals: int = 8
    grids: DatasetGrids = field(default_factory=DatasetGrids)
    cnn: tinycnn.TrainConfig = field(default_factory=tinycnn.TrainConfig)
    tmlp: baselines.MlpConfig = field(default_factory=baselines.MlpConfig)
    svm: baselines.SvmConfig = field(default_factory=baselines.SvmConfig)
    autoencoder: baselines.AeConfig = field(default_factory=baselines.AeConfig)

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError(f"train fraction {self.train_fraction} outside (0, 1)")
        if not self.fs_list:
            raise ConfigError("fs list must be non-empty")
        if not self.bus_subsets:
            raise ConfigError("bus subsets must be non-empty")
        seen = set()
        for subset in self.bus_subsets:
            key = tuple(sorted(subset))
            if key in seen:
                raise ConfigError(f"duplicate bus subset {subset}")
            seen.add(key)
            if not subset or not set(subset) <= set(MONITORED_BUSES):
                raise ConfigError(
                    f"bus subset {subset} not a non-empty subset of {MONITORED_BUSES}"
                )
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}")
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")

    def dataset_config(self, fs: float, seed: int) -> DatasetConfig:
        return DatasetConfig(
            fs=fs, seed=seed, snr_db=self.snr_db, duration=self.duration,
            event_time=self.event_time, amplitude=self.amplitude, grids=self.grids,
        )


def derive_seed(*parts) -> int:
    """Stable 64-bit seed from integer coordinates (stage, repeat, fs, ...)."""
    entropy = [int(p) for p in parts]
    return int(np.random.SeedSequence(entropy).generate_state(1, np.uint64)[0])


# ── Config file round trip ───────────────────────────────────────────────────

def _dataclass_io(cls):
    fields = {f.name for f in cls.__dataclass_fields__.values()}

    def from_json(obj):
        unknown = set(obj) - fields
        if unknown:
            raise ConfigError(f"unknown keys {sorted(unknown)} for {cls.__name__}")
        kwargs = dict(obj)
        if "hidden" in kwargs:
            kwargs["hidden"] = tuple(kwargs["hidden"])
        return cls(**kwargs)

    def to_json(cfg):
        out = {}
        for name in fields:
            v = getattr(cfg, name)
            out[name] = list(v) if isinstance(v, tuple) else v
        return out

    return from_json, to_json


_TOP_LEVEL_SIMPLE = (
    "seed", "placement_fs", "train_fraction", "snr_db", "duration",
    "event_time", "amplitude", "jitter", "repeats", "num_intervals",
)


def config_to_json(config: ExperimentConfig) -> dict:
    out = {name: getattr(config, name) for name in _TOP_LEVEL_SIMPLE}
    out["fs_list"] = list(config.fs_list)
    out["bus_subsets"] = [list(s) for s in config.bus_subsets]
    out["methods"] = list(config.methods)
    out["grids"] = synthgrid._grids_to_json(config.grids)
    for name, cls in (("cnn", tinycnn.TrainConfig), ("tmlp", baselines.MlpConfig),
                      ("svm", baselines.SvmConfig),
                      ("autoencoder", baselines.AeConfig)):
        _, to_json = _dataclass_io(cls)
        out[name] = to_json(getattr(config, name))
    return out


def config_from_json(obj: dict) -> ExperimentConfig:
    """Build a config from a JSON document; every field optional, unknown
    keys rejected."""
    known = set(_TOP_LEVEL_SIMPLE) | {
        "fs_list", "bus_subsets", "methods", "grids", "cnn", "tmlp", "svm",
        "autoencoder",
    }
    unknown = set(obj) - known
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    kwargs = {k: obj[k] for k in _TOP_LEVEL_SIMPLE if k in obj}
    if "fs_list" in obj:
        kwargs["fs_list"] = tuple(obj["fs_list"])
    if "bus_subsets" in obj:
        kwargs["bus_subsets"] = tuple(tuple(s) for s in obj["bus_subsets"])
    if "methods" in obj:
        kwargs["methods"] = tuple(obj["methods"])
    if "grids" in obj:
        kwargs["grids"] = synthgrid._grids_from_json(
            {**synthgrid._grids_to_json(DatasetGrids()), **obj["grids"]}
        )
    for name, cls in (("cnn", tinycnn.TrainConfig), ("tmlp", baselines.MlpConfig),
                      ("svm", baselines.SvmConfig),
                      ("autoencoder", baselines.AeConfig)):
        if name in obj:
            from_json, _ = _dataclass_io(cls)
            kwargs[name] = from_json(obj[name])
    return ExperimentConfig(**kwargs)


def load_config(path) -> ExperimentConfig:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON: {exc}") from exc
    return config_from_json(obj)


# ── Stratified split ─────────────────────────────────────────────────────────

@dataclass(frozen=True)
class SplitIndex:
    train: np.ndarray
    test: np.ndarray

    def fingerprint(self) -> str:
        digest = hashlib.sha256()
        digest.update(np.asarray(self.train, dtype="<i8").tobytes())
        digest.update(b"|")
        digest.update(np.asarray(self.test, dtype="<i8").tobytes())
        return digest.hexdigest()[:16]


def largest_remainder_counts(class_counts, fraction: float) -> list[int]:
    """Apportion round(fraction * total) slots over classes by quota floors
    plus largest remainders (ties to the lower class index)."""
    quotas = [fraction * c for c in class_counts]
    total = int(math.floor(fraction * sum(class_counts) + 0.5))
    base = [int(math.floor(q)) for q in quotas]
    seats = total - sum(base)
    order = sorted(range(len(quotas)),
                   key=lambda i: (-(quotas[i] - base[i]), i))
    out = list(base)
    for i in range(seats):
        out[order[i % len(order)]] += 1
    return out


def split_stratified(dataset, train_fraction: float, seed: int) -> SplitIndex:
    """Per-class seeded shuffle; test sizes by largest-remainder apportionment."""
    labels = dataset.labels if isinstance(dataset, Dataset) else np.asarray(dataset)
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError(f"train fraction {train_fraction} outside (0, 1)")
    class_codes = list(range(1, metrics.NUM_CLASSES + 1))
    counts = [int(np.sum(labels == c)) for c in class_codes]
    empty = [c for c, n in zip(class_codes, counts) if n == 0]
    if empty:
        raise ConfigError(f"classes {empty} have no records")
    test_counts = largest_remainder_counts(counts, 1.0 - train_fraction)
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for c, n_test in zip(class_codes, test_counts):
        members = np.flatnonzero(labels == c)
        perm = rng.permutation(members)
        test_idx.extend(perm[:n_test])
        train_idx.extend(perm[n_test:])
    return SplitIndex(np.sort(np.array(train_idx, dtype=int)),
                      np.sort(np.array(test_idx, dtype=int)))


# ── Pipeline ─────────────────────────────────────────────────────────────────

@dataclass
class RunResult:
    method: str
    fs: float
    buses: tuple
    repeat: int
    accuracy: float
    report: metrics.MetricsReport
    cm: np.ndarray
    fingerprint: str
    model: object


def featurize_dataset(dataset: Dataset, buses, jitter: bool = True):
    """Window + featurize every record; labels ride along on the matrices."""
    out = []
    for rec in dataset.records:
        window = extract_window(rec, jitter=jitter)
        fm = featurize(window, buses)
        out.append(FeatureMatrix(fm.values, fm.buses, rec.label))
    return out


def _build(config: ExperimentConfig, fs: float, repeat: int) -> Dataset:
    try:
        ds_seed = derive_seed(config.seed, repeat, _STAGE_DATASET, fs)
        return build_dataset(config.dataset_config(fs, ds_seed))
    except Exception as exc:
        raise PipelineError("dataset", exc) from exc


def _features_split(config: ExperimentConfig, dataset: Dataset, buses, repeat: int):
    try:
        features = featurize_dataset(dataset, buses, jitter=config.jitter)
    except Exception as exc:
        raise PipelineError("featurize", exc) from exc
    try:
        split_seed = derive_seed(config.seed, repeat, _STAGE_SPLIT)
        split = split_stratified(dataset, config.train_fraction, split_seed)
    except Exception as exc:
        raise PipelineError("split", exc) from exc
    return features, split


def _prepare(config: ExperimentConfig, fs: float, buses, repeat: int):
    dataset = _build(config, fs, repeat)
    return _features_split(config, dataset, buses, repeat)


def _train_eval(config: ExperimentConfig, method: str, features, split: SplitIndex,
                fs: float, buses, repeat: int) -> RunResult:
    labels = np.array([fm.label for fm in features], dtype=int)
    train_fms = [features[i] for i in split.train]
    test_fms = [features[i] for i in split.test]
    y_train = labels[split.train]
    y_test = labels[split.test]
    train_seed = derive_seed(config.seed, repeat, _STAGE_TRAIN, METHODS.index(method))
    try:
        if method == "cnn":
            arch = tinycnn.CnnArch(input_h=len(buses),
                                   input_w=train_fms[0].width)
            cfg = replace(config.cnn, seed=train_seed)
            model = tinycnn.init_model(arch, train_seed, cfg.init_std)
            model, _ = tinycnn.train(
                model, list(zip(train_fms, y_train)), cfg
            )
            preds = tinycnn.predict_batch(model, test_fms)
        elif method == "tmlp":
            x_train = baselines.flatten_features(train_fms)
            x_test = baselines.flatten_features(test_fms)
            model = baselines.train_tmlp(
                x_train, y_train, replace(config.tmlp, seed=train_seed)
            )
            preds = baselines.tmlp_predict(model, x_test)
        elif method == "svm":
            x_train = baselines.energy_feature_set(train_fms, config.num_intervals)
            x_test = baselines.energy_feature_set(test_fms, config.num_intervals)
            model = baselines.train_svm_ovr(
                x_train, y_train, replace(config.svm, seed=train_seed)
            )
            preds = baselines.svm_predict(model, x_test)
        elif method == "autoencoder":
            x_train = baselines.energy_feature_set(train_fms, config.num_intervals)
            x_test = baselines.energy_feature_set(test_fms, config.num_intervals)
            model = baselines.train_autoencoder_clf(
                x_train, y_train, replace(config.autoencoder, seed=train_seed)
            )
            preds = baselines.ae_predict(model, x_test)
        else:
            raise ValueError(f"unknown method {method!r}")
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(f"train[{method}]", exc) from exc
    try:
        cm = metrics.confusion(preds, y_test)
        report = metrics.aggregate(cm)
    except Exception as exc:
        raise PipelineError("evaluate", exc) from exc
    return RunResult(method, fs, tuple(buses), repeat, report.accuracy,
                     report, cm, split.fingerprint(), model)


def run_pipeline(config: ExperimentConfig, fs: float, buses, method: str,
                 repeat: int = 0) -> RunResult:
    """One full build -> featurize -> split -> train -> evaluate cell."""
    features, split = _prepare(config, fs, buses, repeat)
    return _train_eval(config, method, features, split, fs, buses, repeat)


def _max_workers() -> int:
    raw = os.environ.get("SWEC_THREADS", "")
    if not raw:
        return 1
    try:
        value = int(raw)
    except ValueError as exc:
        raise ConfigError(f"SWEC_THREADS={raw!r} is not a positive integer") from exc
    if value < 1:
        raise ConfigError(f"SWEC_THREADS={raw!r} is not a positive integer")
    return value


def _run_cells(cells, fn):
    """Evaluate independent sweep cells, optionally on a thread pool."""
    workers = _max_workers()
    if workers == 1:
        return [fn(cell) for cell in cells]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, cells))


@dataclass
class SweepRow:
    key: object
    accuracies: list
    mean_accuracy: float


def sweep_sampling_rate(config: ExperimentConfig) -> list[SweepRow]:
    """Accuracy per sampling rate (all monitored buses, convolutional model),
    averaged over the configured repeat seeds. Rows ascend in rate."""
    if len(config.fs_list) < 2:
        raise ConfigError("sampling-rate sweep needs at least 2 rates")
    buses = MONITORED_BUSES
    cells = [(fs, r) for fs in sorted(config.fs_list) for r in range(config.repeats)]
    results = _run_cells(cells,
                         lambda c: run_pipeline(config, c[0], buses, "cnn", c[1]))
    rows = []
    for fs in sorted(config.fs_list):
        accs = [r.accuracy for r in results if r.fs == fs]
        rows.append(SweepRow(fs, accs, float(np.mean(accs))))
    return rows


def sweep_placement(config: ExperimentConfig) -> list[SweepRow]:
    """Accuracy per sensor subset at the placement-study sampling rate.

    The dataset is shared across subsets within one repeat (only the
    featurization differs), matching run_pipeline cell by cell."""
    results = []
    for repeat in range(config.repeats):
        dataset = _build(config, config.placement_fs, repeat)

        def cell(subset, repeat=repeat, dataset=dataset):
            features, split = _features_split(config, dataset, subset, repeat)
            return _train_eval(config, "cnn", features, split,
                               config.placement_fs, subset, repeat)

        results.extend(_run_cells(list(config.bus_subsets), cell))
    rows = []
    for subset in config.bus_subsets:
        accs = [r.accuracy for r in results if r.buses == tuple(subset)]
        rows.append(SweepRow(tuple(subset), accs, float(np.mean(accs))))
    return rows


@dataclass
class MethodComparison:
    method: str
    runs: list           # RunResult per repeat
    mean_accuracy: float

    def mean_macro(self, attr: str) -> float | None:
        vals = [getattr(r.report, attr) for r in self.runs]
        defined = [v for v in vals if v is not None]
        return float(np.mean(defined)) if defined else None


def compare_methods(config: ExperimentConfig, fs: float | None = None,
                    buses=MONITORED_BUSES) -> list[MethodComparison]:
    """All configured methods on identical splits and features, per repeat."""
    if len(config.methods) < 2:
        raise ConfigError("comparison needs at least 2 methods")
    fs = config.placement_fs if fs is None else fs
    per_method = {m: [] for m in config.methods}
    for repeat in range(config.repeats):
        features, split = _prepare(config, fs, buses, repeat)
        for method in config.methods:
            per_method[method].append(
                _train_eval(config, method, features, split, fs, buses, repeat)
            )
    return [
        MethodComparison(m, runs, float(np.mean([r.accuracy for r in runs])))
        for m, runs in per_method.items()
    ]


# ── Artifact persistence ─────────────────────────────────────────────────────

_MODEL_SAVERS = {
    "cnn": tinycnn.save_model,
    "svm": baselines.save_svm,
    "tmlp": baselines.save_tmlp,
    "autoencoder": baselines.save_autoencoder,
}

_MODEL_LOADERS = {
    "cnn": tinycnn.load_model,
    "svm": baselines.load_svm,
    "tmlp": baselines.load_tmlp,
    "autoencoder": baselines.load_autoencoder,
}


def save_model(method: str, model, path) -> None:
    _MODEL_SAVERS[method](model, path)


def load_model(method: str, path):
    return _MODEL_LOADERS[method](path)


def save_report(rows, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(rows)
    return path


def load_report(path) -> list[list[str]]:
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            return [row for row in csv.reader(fh)]
    except OSError as exc:
        raise ValueError(f"{path}: cannot read report: {exc}") from exc


def comparison_rows(comparisons: list[MethodComparison]) -> list[list[str]]:
    """Method-by-metric summary table (repeat means), plus split fingerprints."""
    rows = [["method", "acc", "pre_macro", "rec_macro", "f1_macro", "fpr_macro",
             "split_fingerprints"]]
    for comp in comparisons:
        fingerprints = "+".join(r.fingerprint for r in comp.runs)
        rows.append([
            comp.method,
            metrics.format_percent(comp.mean_accuracy),
            metrics.format_percent(comp.mean_macro("macro_precision")),
            metrics.format_percent(comp.mean_macro("macro_recall")),
            metrics.format_percent(comp.mean_macro("macro_f1")),
            metrics.format_percent(comp.mean_macro("macro_fpr")),
            fingerprints,
        ])
    return rows


def sweep_rows(rows: list[SweepRow], key_name: str) -> list[list[str]]:
    header = [key_name, "mean_accuracy"]
    header += [f"accuracy_r{i}" for i in range(len(rows[0].accuracies))]
    out = [header]
    for row in rows:
        key = "+".join(str(b) for b in row.key) if isinstance(row.key, tuple) \
            else repr(row.key)
        out.append([key, metrics.format_percent(row.mean_accuracy)]
                   + [metrics.format_percent(a) for a in row.accuracies])
    return out


def write_comparison_run(config: ExperimentConfig, out_dir) -> Path:
    """Full comparison run with persisted manifest, reports, models, matrices."""
    out = Path(out_dir)
    (out / "reports").mkdir(parents=True, exist_ok=True)
    (out / "models").mkdir(exist_ok=True)
    (out / "confusion").mkdir(exist_ok=True)
    comparisons = compare_methods(config)
    save_report(comparison_rows(comparisons), out / "reports" / "compare.csv")
    manifest = {
        "config": config_to_json(config),
        "results": {
            comp.method: {
                "mean_accuracy": comp.mean_accuracy,
                "accuracies": [r.accuracy for r in comp.runs],
                "fingerprints": [r.fingerprint for r in comp.runs],
            }
            for comp in comparisons
        },
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    for comp in comparisons:
        for run in comp.runs:
            tag = f"{comp.method}_r{run.repeat}"
            save_model(comp.method, run.model, out / "models" / f"{tag}.bin")
            save_report(metrics.report_rows(comp.method, run.report, run.cm),
                        out / "reports" / f"{tag}.csv")
            save_report([[str(int(v)) for v in row] for row in run.cm],
                        out / "confusion" / f"{tag}.csv")
    return out
