"""Config-file experiments: spec parsing, dataset assembly, artifact writing.

A spec is one YAML mapping with ``dataset``, ``preprocessing``, ``model``,
``train``, ``seeds`` and optional ``ablate`` / ``sweep`` blocks. Loading
resolves every relative path against the spec file's directory, so the
resolved copy written into each output directory can be re-run from
anywhere and reproduces the artifacts byte for byte: all output files are
emitted with sorted keys, "\\n" newlines and shortest round-trip floats,
and nothing time- or host-dependent is recorded.
"""

from __future__ import annotations

import contextlib
import csv
import functools
import json
import logging
import multiprocessing
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .embedding import FeatureSpace, ModelInputs
from .encoders import DecisionTreeEncoder, TreeBinner
from .errors import ConfigError, DataError
from .model import ModelConfig
from .preprocess import (
    CategoryCodec,
    QuantileNormalizer,
    Table,
    TargetStandardizer,
    load_csv,
    read_schema,
    read_splits,
)
from .significance import bonferroni, wilcoxon_one_sided
from .synthetic import DESK_SIZES, FULL_SIZES, RHO_GRID, SyntheticSpec
from .synthetic import assa_sweep as _sweep_arms
from .synthetic import generate, prepare, summarize_sweep
from .training import SplitData, TrainConfig, TrainData, train_one_seed

log = logging.getLogger(__name__)

WORKERS_ENV = "DUALTAB_WORKERS"
DEFAULT_SEEDS = tuple(range(15))
DEFAULT_ALPHA = 0.05

# ablation names a spec may list: attention-path picks reuse the base
# streams, stream picks force the one variant a single encoding supports
ABLATION_NAMES = ("dfc", "cd", "ce", "cd+ce", "raw", "targeted", "dual")


def _check_keys(d: dict, allowed, where: str) -> None:
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")


def _resolve_path(value, base_dir, where: str) -> str:
    if not isinstance(value, str) or not value:
        raise ConfigError(f"{where}: expected a file path string")
    p = Path(value)
    if base_dir is not None and not p.is_absolute():
        p = Path(base_dir) / p
    return str(p.resolve())


@dataclass(frozen=True)
class CsvSource:
    """A CSV dataset plus its schema and explicit split-index files."""

    path: str
    schema: str
    split_train: str
    split_val: str
    split_test: str

    def to_dict(self) -> dict:
        return {
            "kind": "csv",
            "path": self.path,
            "schema": self.schema,
            "splits": {
                "train": self.split_train,
                "val": self.split_val,
                "test": self.split_test,
            },
        }


@dataclass(frozen=True)
class SyntheticSource:
    """A generated regression dataset; sizes default to the desk scale."""

    rho: float = 0.5
    data_seed: int = 0
    n_train: int = DESK_SIZES[0]
    n_val: int = DESK_SIZES[1]
    n_test: int = DESK_SIZES[2]

    def to_dict(self) -> dict:
        return {
            "kind": "synthetic",
            "rho": self.rho,
            "data_seed": self.data_seed,
            "n_train": self.n_train,
            "n_val": self.n_val,
            "n_test": self.n_test,
        }

    def sizes(self) -> tuple:
        return (self.n_train, self.n_val, self.n_test)


def _parse_dataset(d, base_dir):
    if not isinstance(d, dict):
        raise ConfigError("dataset: expected a mapping")
    kind = d.get("kind")
    if kind == "csv":
        _check_keys(d, ("kind", "path", "schema", "splits"), "dataset")
        for key in ("path", "schema", "splits"):
            if key not in d:
                raise ConfigError(f"dataset.{key}: missing required key")
        splits = d["splits"]
        if not isinstance(splits, dict):
            raise ConfigError("dataset.splits: expected a mapping")
        _check_keys(splits, ("train", "val", "test"), "dataset.splits")
        for key in ("train", "val", "test"):
            if key not in splits:
                raise ConfigError(f"dataset.splits.{key}: missing required key")
        return CsvSource(
            path=_resolve_path(d["path"], base_dir, "dataset.path"),
            schema=_resolve_path(d["schema"], base_dir, "dataset.schema"),
            split_train=_resolve_path(splits["train"], base_dir, "dataset.splits.train"),
            split_val=_resolve_path(splits["val"], base_dir, "dataset.splits.val"),
            split_test=_resolve_path(splits["test"], base_dir, "dataset.splits.test"),
        )
    if kind == "synthetic":
        allowed = ("kind", "rho", "data_seed", "n_train", "n_val", "n_test")
        _check_keys(d, allowed, "dataset")
        try:
            src = SyntheticSource(**{k: d[k] for k in allowed[1:] if k in d})
            # borrow the full validation (rho range, positive sizes, ...)
            SyntheticSpec(
                rho=src.rho,
                seed=src.data_seed,
                n_train=src.n_train,
                n_val=src.n_val,
                n_test=src.n_test,
            )
        except (ConfigError, TypeError) as exc:
            raise ConfigError(f"dataset: {exc}") from None
        return src
    raise ConfigError(f"dataset.kind: expected 'csv' or 'synthetic', got {kind!r}")


@dataclass(frozen=True)
class PrepConfig:
    """Knobs for the fitted-on-train-only input transforms."""

    n_quantiles: int = 1000
    min_samples_leaf: int = 64
    min_impurity_decrease: float = 0.0
    max_depth: int = 8

    def validate(self) -> "PrepConfig":
        if self.n_quantiles < 2:
            raise ConfigError("preprocessing.n_quantiles must be >= 2")
        if self.min_samples_leaf < 1:
            raise ConfigError("preprocessing.min_samples_leaf must be >= 1")
        if self.min_impurity_decrease < 0:
            raise ConfigError("preprocessing.min_impurity_decrease must be >= 0")
        if self.max_depth < 0:
            raise ConfigError("preprocessing.max_depth must be >= 0")
        return self

    def to_dict(self) -> dict:
        return {
            "n_quantiles": self.n_quantiles,
            "min_samples_leaf": self.min_samples_leaf,
            "min_impurity_decrease": self.min_impurity_decrease,
            "max_depth": self.max_depth,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PrepConfig":
        _check_keys(d, cls().to_dict(), "preprocessing")
        return cls(**d).validate()


@dataclass(frozen=True)
class AblateSpec:
    variants: tuple
    reference: str

    def to_dict(self) -> dict:
        return {"variants": list(self.variants), "reference": self.reference}


def _parse_ablate(d: dict) -> AblateSpec:
    if not isinstance(d, dict):
        raise ConfigError("ablate: expected a mapping")
    _check_keys(d, ("variants", "reference"), "ablate")
    variants = d.get("variants")
    if not isinstance(variants, list) or not variants:
        raise ConfigError("ablate.variants: expected a non-empty list")
    for v in variants:
        if v not in ABLATION_NAMES:
            raise ConfigError(
                f"ablate.variants: unknown variant {v!r} "
                f"(choose from {list(ABLATION_NAMES)})"
            )
    if len(set(variants)) != len(variants):
        raise ConfigError("ablate.variants: duplicate entries")
    reference = d.get("reference", variants[-1])
    if reference not in variants:
        raise ConfigError(f"ablate.reference: {reference!r} is not in variants")
    return AblateSpec(variants=tuple(variants), reference=reference)


@dataclass(frozen=True)
class SweepSpec:
    rhos: tuple = RHO_GRID
    seeds: tuple = (0, 1, 2)

    def to_dict(self) -> dict:
        return {"rhos": list(self.rhos), "seeds": list(self.seeds)}


def _parse_sweep(d: dict) -> SweepSpec:
    if not isinstance(d, dict):
        raise ConfigError("sweep: expected a mapping")
    _check_keys(d, ("rhos", "seeds"), "sweep")
    rhos = tuple(d.get("rhos", RHO_GRID))
    seeds = tuple(d.get("seeds", (0, 1, 2)))
    if not rhos:
        raise ConfigError("sweep.rhos: expected a non-empty list")
    for r in rhos:
        if not 0.0 < float(r) <= 1.0:
            raise ConfigError(f"sweep.rhos: {r} outside (0, 1]")
    _validate_seeds(seeds, "sweep.seeds")
    return SweepSpec(rhos=rhos, seeds=seeds)


def _validate_seeds(seeds, where: str) -> None:
    if not seeds:
        raise ConfigError(f"{where}: expected a non-empty list")
    for s in seeds:
        if not isinstance(s, (int, np.integer)) or isinstance(s, bool) or s < 0:
            raise ConfigError(f"{where}: seeds must be non-negative ints, got {s!r}")
    if len(set(seeds)) != len(seeds):
        raise ConfigError(f"{where}: duplicate seeds")


@dataclass
class ExperimentSpec:
    """Everything one command needs; serializable and re-runnable."""

    dataset: object  # CsvSource | SyntheticSource
    prep: PrepConfig
    model: ModelConfig
    train: TrainConfig
    seeds: tuple = DEFAULT_SEEDS
    ablate: AblateSpec = None
    sweep: SweepSpec = None

    def to_dict(self) -> dict:
        d = {
            "dataset": self.dataset.to_dict(),
            "preprocessing": self.prep.to_dict(),
            "model": self.model.to_dict(),
            "train": self.train.to_dict(),
            "seeds": list(self.seeds),
        }
        if self.ablate is not None:
            d["ablate"] = self.ablate.to_dict()
        if self.sweep is not None:
            d["sweep"] = self.sweep.to_dict()
        return d

    @classmethod
    def from_dict(cls, raw: dict, base_dir=None) -> "ExperimentSpec":
        if not isinstance(raw, dict):
            raise ConfigError("spec: expected a mapping")
        allowed = ("dataset", "preprocessing", "model", "train", "seeds",
                   "ablate", "sweep")
        _check_keys(raw, allowed, "spec")
        if "dataset" not in raw:
            raise ConfigError("dataset: missing required block")
        dataset = _parse_dataset(raw["dataset"], base_dir)
        try:
            prep = PrepConfig.from_dict(raw.get("preprocessing", {}) or {})
        except TypeError as exc:
            raise ConfigError(f"preprocessing: {exc}") from None
        try:
            model = ModelConfig.from_dict(raw.get("model", {}) or {})
        except (ConfigError, TypeError) as exc:
            raise ConfigError(f"model: {exc}") from None
        try:
            train = TrainConfig.from_dict(raw.get("train", {}) or {})
        except (ConfigError, TypeError) as exc:
            raise ConfigError(f"train: {exc}") from None
        seeds = tuple(raw.get("seeds", DEFAULT_SEEDS))
        _validate_seeds(seeds, "seeds")
        ablate = _parse_ablate(raw["ablate"]) if "ablate" in raw else None
        sweep = _parse_sweep(raw["sweep"]) if "sweep" in raw else None
        return cls(dataset=dataset, prep=prep, model=model, train=train,
                   seeds=seeds, ablate=ablate, sweep=sweep)


def load_spec(path) -> ExperimentSpec:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"spec file not found: {p}")
    try:
        raw = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{p}: not valid YAML: {exc}") from None
    return ExperimentSpec.from_dict(raw, base_dir=p.parent)


def variant_config(base: ModelConfig, name: str) -> ModelConfig:
    """Model config for one named ablation arm.

    Attention-path names override ``variant``; stream names override
    ``streams``. Repairs follow the model's own consistency rules: a
    single-encoding stream leaves nothing to attend across, so it forces
    the cross-feature-only variant, and variants without that path drop
    the sparse-attention branch.
    """
    if name not in ABLATION_NAMES:
        raise ConfigError(f"unknown variant {name!r}")
    d = base.to_dict()
    if name in ("raw", "targeted", "dual"):
        d["streams"] = name
    else:
        d["variant"] = name
    if d["streams"] != "dual":
        d["variant"] = "cd"
    if d["variant"] in ("dfc", "ce"):
        d["assa"] = False
    return ModelConfig.from_dict(d)


# ---------------------------------------------------------------------------
# dataset assembly


@dataclass
class TabularBundle:
    """Fitted pipeline over one CSV dataset; transforms saw train rows only."""

    space: FeatureSpace
    data: TrainData
    binners: tuple
    cat_encoders: tuple
    table: Table


def build_tabular_data(source: CsvSource, prep: PrepConfig) -> TabularBundle:
    schema = read_schema(source.schema)
    table = load_csv(source.path, schema)
    tr, va, te = read_splits(
        source.split_train, source.split_val, source.split_test, table.n_rows
    )
    task = table.task
    n_classes = len(table.classes)

    if task == "regression":
        std = TargetStandardizer().fit(table.y[tr])
        y_all = std.transform(table.y)
        sigma = std.std_
    else:
        y_all = table.y
        sigma = 1.0
    y_tr = y_all[tr]

    n_num = table.num.shape[1]
    n_cat = table.cat.shape[1]
    num_all = bins_all = cat_all = tgt_all = None
    binners, bin_counts, encoders, cards = (), (), (), ()

    if n_num:
        norm = QuantileNormalizer(n_quantiles=prep.n_quantiles)
        norm.fit(table.num[tr])
        num_all = norm.transform(table.num)
        binners = tuple(
            TreeBinner(prep.min_samples_leaf, prep.min_impurity_decrease,
                       prep.max_depth)
            for _ in range(n_num)
        )
        for j, binner in enumerate(binners):
            binner.fit(table.num[tr, j], y_tr, task, n_classes or None)
        bins_all = np.stack(
            [b.transform(table.num[:, j]) for j, b in enumerate(binners)], axis=1
        )
        bin_counts = tuple(b.n_bins for b in binners)

    if n_cat:
        codec = CategoryCodec().fit(table.cat[tr])
        cat_all = codec.transform(table.cat)
        cards = tuple(codec.cardinalities)
        encoders = tuple(
            DecisionTreeEncoder(prep.min_samples_leaf, prep.min_impurity_decrease,
                                prep.max_depth)
            for _ in range(n_cat)
        )
        for j, enc in enumerate(encoders):
            enc.fit(table.cat[tr, j], y_tr, task, n_classes or None)
        tgt_all = np.stack(
            [e.transform(table.cat[:, j]) for j, e in enumerate(encoders)], axis=1
        )

    full = ModelInputs(
        num_raw=num_all, cat_raw=cat_all, tgt_bins=bins_all, tgt_cat=tgt_all
    )
    space = FeatureSpace(
        task=task,
        n_numeric=n_num,
        cat_cardinalities=cards,
        bin_counts=bin_counts,
        n_classes=n_classes,
    )
    data = TrainData(
        task=task,
        train=SplitData(full.take(tr), y_all[tr]),
        val=SplitData(full.take(va), y_all[va]),
        test=SplitData(full.take(te), y_all[te]),
        target_sigma=sigma,
    )
    return TabularBundle(space, data, binners, encoders, table)


def load_training_data(spec: ExperimentSpec) -> tuple:
    """(FeatureSpace, TrainData) for the spec's dataset."""
    if isinstance(spec.dataset, CsvSource):
        bundle = build_tabular_data(spec.dataset, spec.prep)
        return bundle.space, bundle.data
    needs_targets = spec.model.streams != "raw" or (
        spec.ablate is not None
        and any(
            variant_config(spec.model, v).streams != "raw"
            for v in spec.ablate.variants
        )
    )
    if needs_targets:
        raise ConfigError(
            "synthetic datasets provide raw numeric inputs only; "
            "set model.streams: raw"
        )
    src = spec.dataset
    data = generate(
        SyntheticSpec(
            rho=src.rho,
            seed=src.data_seed,
            n_train=src.n_train,
            n_val=src.n_val,
            n_test=src.n_test,
        )
    )
    return prepare(data, n_quantiles=spec.prep.n_quantiles)


# ---------------------------------------------------------------------------
# deterministic artifact writers


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(text)


def write_yaml(path: Path, d: dict) -> None:
    _write_text(path, yaml.safe_dump(d, sort_keys=True, default_flow_style=False))


def write_jsonl(path: Path, records) -> None:
    lines = [json.dumps(r, sort_keys=True) for r in records]
    _write_text(path, "".join(line + "\n" for line in lines))


def write_json(path: Path, d: dict) -> None:
    _write_text(path, json.dumps(d, sort_keys=True, indent=2) + "\n")


def _cell(value) -> str:
    # bool before int: bool subclasses int; plain repr of numpy scalars
    # would leak the wrapper ("np.float64(0.5)") into the file
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def write_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])


def metric_name(task: str) -> str:
    return "rmse" if task == "regression" else "accuracy"


def _mean_std(values) -> tuple:
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


@contextlib.contextmanager
def worker_map(workers: int):
    """Order-preserving map, fanned out over processes when workers > 1."""
    if workers <= 1:
        yield map
        return
    with multiprocessing.Pool(processes=workers) as pool:
        yield pool.map


def default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV}: expected an integer, got {raw!r}")
    if n < 1:
        raise ConfigError(f"{WORKERS_ENV}: expected >= 1, got {n}")
    return n


# ---------------------------------------------------------------------------
# commands; each writes the resolved spec plus its own artifacts


def _train_job(seed, model_config, space, data, train_config):
    return train_one_seed(model_config, space, data, train_config, seed)


def cmd_run(spec: ExperimentSpec, out_dir, workers: int = 1) -> dict:
    out = Path(out_dir)
    space, data = load_training_data(spec)
    job = functools.partial(
        _train_job, model_config=spec.model, space=space, data=data,
        train_config=spec.train,
    )
    with worker_map(workers) as mapper:
        results = list(mapper(job, spec.seeds))
    metric = metric_name(data.task)
    records = [dict(r.to_record(), metric=metric) for r in results]
    mean, std = _mean_std([r.test_metric for r in results])
    summary = {
        "task": data.task,
        "metric": metric,
        "n_seeds": len(spec.seeds),
        "mean": mean,
        "std": std,
    }
    write_yaml(out / "resolved_spec.yaml", spec.to_dict())
    write_jsonl(out / "runs.jsonl", records)
    write_json(out / "summary.json", summary)
    return summary


def _ablate_job(cell, space, data, train_config):
    name, model_config, seed = cell
    result = train_one_seed(model_config, space, data, train_config, seed)
    return name, result


def cmd_ablate(spec: ExperimentSpec, out_dir, workers: int = 1) -> list:
    if spec.ablate is None:
        raise ConfigError("ablate: spec has no ablate block")
    out = Path(out_dir)
    variants, reference = spec.ablate.variants, spec.ablate.reference
    configs = {name: variant_config(spec.model, name) for name in variants}
    space, data = load_training_data(spec)
    cells = [(n, configs[n], s) for n in variants for s in spec.seeds]
    job = functools.partial(
        _ablate_job, space=space, data=data, train_config=spec.train
    )
    with worker_map(workers) as mapper:
        outcomes = list(mapper(job, cells))

    metric = metric_name(data.task)
    records = [
        dict(result.to_record(), variant=name, metric=metric)
        for name, result in outcomes
    ]
    by_variant = {
        name: [res.test_metric for n, res in outcomes if n == name]
        for name in variants
    }
    comparison = []
    for name in variants:
        mean, std = _mean_std(by_variant[name])
        comparison.append((name, metric, len(by_variant[name]), mean, std))

    direction = "lower-better" if metric == "rmse" else "higher-better"
    candidates = [n for n in variants if n != reference]
    wilcoxon_rows = []
    if not candidates:
        log.info("only the reference variant listed; rank test skipped")
    else:
        tests = [
            wilcoxon_one_sided(by_variant[name], by_variant[reference], direction)
            for name in candidates
        ]
        decisions, threshold = bonferroni([t.p_value for t in tests], DEFAULT_ALPHA)
        for name, t, ok in zip(candidates, tests, decisions):
            wilcoxon_rows.append(
                (name, reference, t.n_nonzero, t.statistic, t.p_value,
                 t.method, ok, threshold)
            )

    write_yaml(out / "resolved_spec.yaml", spec.to_dict())
    write_jsonl(out / "runs.jsonl", records)
    write_csv(
        out / "comparison.csv",
        ("variant", "metric", "n_seeds", "mean", "std"),
        comparison,
    )
    write_csv(
        out / "wilcoxon.csv",
        ("candidate", "reference", "n_nonzero", "statistic", "p_value",
         "method", "significant", "threshold"),
        wilcoxon_rows,
    )
    return comparison


def cmd_assa_sweep(
    spec: ExperimentSpec, out_dir, workers: int = 1, full_scale: bool = False
) -> list:
    if not isinstance(spec.dataset, SyntheticSource):
        raise ConfigError("assa-sweep: spec needs a synthetic dataset")
    if spec.model.streams != "raw":
        raise ConfigError(
            "synthetic datasets provide raw numeric inputs only; "
            "set model.streams: raw"
        )
    sweep = spec.sweep if spec.sweep is not None else SweepSpec()
    if full_scale:
        src = spec.dataset
        spec.dataset = SyntheticSource(
            rho=src.rho, data_seed=src.data_seed,
            n_train=FULL_SIZES[0], n_val=FULL_SIZES[1], n_test=FULL_SIZES[2],
        )
    spec.sweep = sweep
    # fail on an unusable model before any training starts
    for arm in (True, False):
        ModelConfig.from_dict({**spec.model.to_dict(), "assa": arm})

    out = Path(out_dir)
    with worker_map(workers) as mapper:
        records = _sweep_arms(
            spec.model, spec.train,
            rhos=sweep.rhos, seeds=sweep.seeds,
            sizes=spec.dataset.sizes(), map_fn=mapper,
        )
    summary = summarize_sweep(records)
    write_yaml(out / "resolved_spec.yaml", spec.to_dict())
    write_csv(
        out / "sweep.csv",
        ("rho", "seed", "assa", "test_rmse", "best_epoch"),
        [(r["rho"], r["seed"], r["assa"], r["test_rmse"], r["best_epoch"])
         for r in records],
    )
    write_csv(
        out / "plot_data.csv",
        ("rho", "assa", "n", "mean_rmse", "std_rmse"),
        [(s["rho"], s["assa"], s["n"], s["mean_rmse"], s["std_rmse"])
         for s in summary],
    )
    return summary


def cmd_encode(spec: ExperimentSpec, out_dir) -> None:
    if not isinstance(spec.dataset, CsvSource):
        raise ConfigError("encode: spec needs a csv dataset")
    out = Path(out_dir)
    bundle = build_tabular_data(spec.dataset, spec.prep)
    table = bundle.table

    blob = {
        "task": table.task,
        "numeric": {
            name: binner.to_dict()
            for name, binner in zip(table.num_names, bundle.binners)
        },
        "categorical": {
            name: enc.to_dict()
            for name, enc in zip(table.cat_names, bundle.cat_encoders)
        },
    }

    header, columns = [], []
    for j, name in enumerate(table.num_names):
        header.append(f"{name}__bin")
        columns.append(bundle.binners[j].transform(table.num[:, j]))
    for j, name in enumerate(table.cat_names):
        codes = bundle.cat_encoders[j].transform(table.cat[:, j])
        if codes.ndim == 2:
            for k in range(codes.shape[1]):
                header.append(f"{name}__p{k}")
                columns.append(codes[:, k])
        else:
            header.append(f"{name}__code")
            columns.append(codes)
    rows = [
        [columns[c][i] for c in range(len(columns))]
        for i in range(table.n_rows)
    ]
    write_yaml(out / "resolved_spec.yaml", spec.to_dict())
    write_json(out / "encoders.json", blob)
    write_csv(out / "encoded.csv", header, rows)


def read_runs(path) -> list:
    """Per-seed records from a runs.jsonl written by `run` or `ablate`."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"runs file not found: {p}")
    records = []
    with open(p) as fh:
        for i, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError:
                raise DataError(f"{p}: line {i}: not valid JSON")
            for key in ("seed", "test_metric", "metric"):
                if key not in rec:
                    raise DataError(f"{p}: line {i}: missing key '{key}'")
            records.append(rec)
    if not records:
        raise DataError(f"{p}: no records")
    return records


def cmd_stats(candidate_path, reference_path, out_dir=None,
              alpha: float = DEFAULT_ALPHA) -> dict:
    """Paired one-sided test: is the candidate arm better than the reference?"""
    cand = read_runs(candidate_path)
    ref = read_runs(reference_path)
    metrics = {r["metric"] for r in cand} | {r["metric"] for r in ref}
    if len(metrics) != 1:
        raise DataError(f"metric mismatch between runs files: {sorted(metrics)}")
    metric = metrics.pop()

    def by_seed(records, path):
        seen = {}
        for r in records:
            if r["seed"] in seen:
                raise DataError(f"{path}: duplicate seed {r['seed']}")
            seen[r["seed"]] = float(r["test_metric"])
        return seen

    c, r = by_seed(cand, candidate_path), by_seed(ref, reference_path)
    if set(c) != set(r):
        odd = sorted(set(c) ^ set(r))
        raise DataError(f"runs files do not pair by seed; unmatched: {odd}")
    seeds = sorted(c)
    direction = "lower-better" if metric == "rmse" else "higher-better"
    result = wilcoxon_one_sided(
        [c[s] for s in seeds], [r[s] for s in seeds], direction
    )
    decisions, threshold = bonferroni([result.p_value], alpha)
    row = {
        "candidate": str(candidate_path),
        "reference": str(reference_path),
        "metric": metric,
        "direction": direction,
        "n_nonzero": result.n_nonzero,
        "statistic": result.statistic,
        "p_value": result.p_value,
        "method": result.method,
        "significant": decisions[0],
        "threshold": threshold,
    }
    if out_dir is not None:
        write_csv(
            Path(out_dir) / "wilcoxon.csv",
            ("candidate", "reference", "metric", "direction", "n_nonzero",
             "statistic", "p_value", "method", "significant", "threshold"),
            [tuple(row.values())],
        )
    return row
