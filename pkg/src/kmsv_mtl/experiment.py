"""Experiment configuration and the fit/evaluate protocol shared by the CLI and tests.

A configuration is a nested mapping (usually loaded from YAML).  It is
resolved once into :class:`ExperimentConfig`, whose :meth:`to_dict` output
contains every defaulted field so an echoed config re-runs identically.
"""

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from . import data as data_mod
from . import solvers
from .errors import KmsvError, ParameterError
from .evaluation import evaluate, predict
from .tasks import MultiTaskDataset

__all__ = [
    "ConfigError",
    "MethodSpec",
    "ExperimentConfig",
    "RunContext",
    "load_config",
    "resolve_config",
    "build_dataset",
    "iter_runs",
    "fit_method",
    "select_hyperparameter",
    "run_protocol",
    "METHODS",
]

METHODS = ("kmsv", "kmsv-new", "ridge", "trace")

DEFAULT_RIDGE_GRID = [1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3]
DEFAULT_TRACE_GRID = [1.0, 3.0, 1e1, 3e1, 1e2, 3e2, 1e3, 3e3]


class ConfigError(KmsvError, ValueError):
    exit_code = 2


@dataclass(frozen=True)
class MethodSpec:
    """One method entry of an experiment.

    ``weight`` is gamma for kmsv / kmsv-new / trace and lambda for ridge.
    A non-empty ``grid`` replaces ``weight`` by holdout selection on the
    training split.
    """

    name: str
    weight: float = None
    grid: tuple = ()
    k: int = None
    max_iter: int = 100
    tol: float = 1e-7
    eps: float = None
    init: str = "ridge"
    init_lambda: float = None
    floor: float = 1e-10

    def solver_config(self, weight, k, seed) -> solvers.SolverConfig:
        return solvers.SolverConfig(
            gamma=weight,
            k=k,
            max_iter=self.max_iter,
            tol=self.tol,
            eps=self.eps,
            init=self.init,
            init_lambda=self.init_lambda,
            seed=seed,
            floor=self.floor,
        )

    def to_dict(self):
        key = "lambda" if self.name == "ridge" else "gamma"
        out = {"name": self.name}
        if self.grid:
            out[f"{key}_grid"] = [float(v) for v in self.grid]
        else:
            out[key] = float(self.weight)
        if self.name in ("kmsv", "kmsv-new"):
            out["k"] = self.k
        if self.name != "ridge":
            out.update(
                max_iter=self.max_iter,
                tol=self.tol,
                eps=self.eps,
                init=self.init,
                init_lambda=self.init_lambda,
                floor=self.floor,
            )
        return out


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: dict
    methods: tuple
    train_fractions: tuple = (0.5,)
    per_task: bool = True
    noise: dict = None
    standardize: bool = False
    repetitions: int = 1
    tuning_fraction: float = 0.8
    seed: int = 0
    output_dir: str = None

    def to_dict(self, include_output=True):
        out = {
            "seed": self.seed,
            "dataset": copy.deepcopy(self.dataset),
            "split": {"train_fractions": list(self.train_fractions), "per_task": self.per_task},
            "noise": copy.deepcopy(self.noise),
            "standardize": self.standardize,
            "repetitions": self.repetitions,
            "tuning_fraction": self.tuning_fraction,
            "methods": [m.to_dict() for m in self.methods],
        }
        if include_output:
            out["output_dir"] = self.output_dir
        return out

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(include_output=False), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def dump_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True, default_flow_style=False)


def load_config(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        raw = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (yaml.YAMLError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from None
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must be a mapping at top level")
    return raw


_SYNTH_DEFAULTS = {"T": 25, "d": 100, "n": 400, "rank": 5, "noise_std": 1.0}
_NOISE_DEFAULTS = {"task_fraction": 0.3, "mean": 1.0, "variance": 2.0, "parameterization": "variance"}
_DEFAULT_METHODS = [
    {"name": "kmsv"},
    {"name": "kmsv-new"},
    {"name": "ridge"},
    {"name": "trace"},
]


def _resolve_dataset(raw):
    ds = dict(raw or {})
    kind = ds.get("kind", "csv" if "path" in ds else "synthetic")
    if kind == "synthetic":
        params = dict(_SYNTH_DEFAULTS)
        params.update(ds.get("synthetic") or {})
        unknown = set(params) - set(_SYNTH_DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown synthetic keys: {sorted(unknown)}")
        for key in ("T", "d", "n", "rank"):
            params[key] = int(params[key])
        params["noise_std"] = float(params["noise_std"])
        if not 0 <= params["rank"] < min(params["d"], params["T"]):
            raise ConfigError(
                f"synthetic rank={params['rank']} must be below min(d, T)="
                f"{min(params['d'], params['T'])} so that a tail remains to suppress"
            )
        return {"kind": "synthetic", "synthetic": params}
    if kind == "csv":
        if not ds.get("path"):
            raise ConfigError("csv dataset needs a 'path'")
        return {"kind": "csv", "path": str(ds["path"]), "wstar": ds.get("wstar")}
    raise ConfigError(f"dataset kind {kind!r} must be 'synthetic' or 'csv'")


def _resolve_method(raw, default_k):
    if isinstance(raw, str):
        raw = {"name": raw}
    raw = dict(raw)
    name = raw.pop("name", None)
    if name not in METHODS:
        raise ConfigError(f"method {name!r} must be one of {METHODS}")
    key = "lambda" if name == "ridge" else "gamma"
    weight = raw.pop(key, None)
    grid = tuple(float(v) for v in raw.pop(f"{key}_grid", None) or ())
    if weight is None and not grid:
        if name == "kmsv":
            weight = solvers.DEFAULT_GAMMA_KMSV
        elif name == "kmsv-new":
            weight = solvers.DEFAULT_GAMMA_KMSV_NEW
        elif name == "ridge":
            grid = tuple(DEFAULT_RIDGE_GRID)
        else:
            grid = tuple(DEFAULT_TRACE_GRID)
    if grid:
        weight = None
    k = raw.pop("k", None)
    if name in ("kmsv", "kmsv-new"):
        k = default_k if k is None else k
        if k is None:
            raise ConfigError(f"method {name} needs 'k' for csv datasets")
        k = int(k)
    else:
        k = None
    fields = {}
    for opt in ("max_iter", "tol", "eps", "init", "init_lambda", "floor"):
        if opt in raw:
            fields[opt] = raw.pop(opt)
    if raw:
        raise ConfigError(f"unknown keys for method {name}: {sorted(raw)}")
    for opt in ("tol", "eps", "init_lambda", "floor"):
        if fields.get(opt) is not None:
            fields[opt] = float(fields[opt])
    if "max_iter" in fields:
        fields["max_iter"] = int(fields["max_iter"])
    spec = MethodSpec(
        name=name, weight=None if weight is None else float(weight), grid=grid, k=k, **fields
    )
    try:
        spec.solver_config(spec.weight if spec.weight is not None else grid[0], k or 0, 0)
    except ParameterError as exc:
        raise ConfigError(f"method {name}: {exc}") from None
    return spec


def resolve_config(raw: dict, seed=None, output_dir=None, standardize=None) -> ExperimentConfig:
    """Fill defaults, validate and apply command-line overrides."""
    raw = copy.deepcopy(raw or {})
    known = {"seed", "dataset", "split", "noise", "standardize", "repetitions",
             "tuning_fraction", "methods", "output_dir"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown top-level config keys: {sorted(unknown)}")
    dataset = _resolve_dataset(raw.get("dataset"))
    default_k = None
    if dataset["kind"] == "synthetic":
        p = dataset["synthetic"]
        default_k = min(p["d"], p["T"]) - p["rank"]
    methods = tuple(_resolve_method(m, default_k) for m in raw.get("methods") or _DEFAULT_METHODS)
    if not methods:
        raise ConfigError("at least one method is required")
    split = dict(raw.get("split") or {})
    fractions = split.get("train_fractions", split.get("train_fraction", [0.5]))
    if not isinstance(fractions, (list, tuple)):
        fractions = [fractions]
    fractions = tuple(float(f) for f in fractions)
    for f in fractions:
        if not 0 < f < 1:
            raise ConfigError(f"train fraction {f} must lie in (0, 1)")
    noise = raw.get("noise")
    if noise:
        merged = dict(_NOISE_DEFAULTS)
        merged.update(noise)
        unknown = set(merged) - set(_NOISE_DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown noise keys: {sorted(unknown)}")
        try:
            data_mod.NoiseSpec(**merged)
        except (ParameterError, TypeError) as exc:
            raise ConfigError(f"noise: {exc}") from None
        noise = merged
    else:
        noise = None
    repetitions = int(raw.get("repetitions", 1))
    if repetitions < 1:
        raise ConfigError("repetitions must be >= 1")
    tuning_fraction = float(raw.get("tuning_fraction", 0.8))
    if not 0 < tuning_fraction < 1:
        raise ConfigError("tuning_fraction must lie in (0, 1)")
    return ExperimentConfig(
        dataset=dataset,
        methods=methods,
        train_fractions=fractions,
        per_task=bool(split.get("per_task", True)),
        noise=noise,
        standardize=bool(raw.get("standardize", False) if standardize is None else standardize),
        repetitions=repetitions,
        tuning_fraction=tuning_fraction,
        seed=int(raw.get("seed", 0) if seed is None else seed),
        output_dir=str(output_dir if output_dir is not None else raw.get("output_dir") or "runs"),
    )


def load_wstar(path) -> np.ndarray:
    """Read a ground-truth weight CSV (as written by ``synth``; header optional)."""
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    try:
        [float(v) for v in first.split(",")]
        skip = 0
    except ValueError:
        skip = 1
    return np.loadtxt(path, delimiter=",", ndmin=2, skiprows=skip)


def build_dataset(cfg: ExperimentConfig):
    """Return ``(dataset, W_star or None)``."""
    ds = cfg.dataset
    if ds["kind"] == "synthetic":
        dataset, truth = data_mod.generate_synthetic(seed=cfg.seed, **ds["synthetic"])
        return dataset, truth.W_star
    dataset = data_mod.load_csv_tasks(ds["path"])
    W_star = None
    if ds.get("wstar"):
        W_star = load_wstar(ds["wstar"])
    return dataset, W_star


@dataclass
class RunContext:
    repetition: int
    train_fraction: float
    train: object
    test: object
    noisy_tasks: np.ndarray
    seed: int

    @property
    def tag(self) -> str:
        return f"train{self.train_fraction:g}/rep{self.repetition:02d}"


def iter_runs(cfg: ExperimentConfig, dataset):
    """Yield one prepared train/test pair per (repetition, train fraction)."""
    for rep in range(cfg.repetitions):
        run_seed = cfg.seed + rep
        for frac in cfg.train_fractions:
            train, test = data_mod.split_train_test(
                dataset, data_mod.SplitSpec(frac, seed=run_seed, per_task=cfg.per_task)
            )
            noisy = np.zeros(0, dtype=int)
            if cfg.noise:
                train, noisy = data_mod.inject_label_noise(
                    train, data_mod.NoiseSpec(seed=run_seed, **cfg.noise)
                )
            if cfg.standardize:
                train, test = data_mod.zscore_features(train, test)
            yield RunContext(rep, frac, train, test, noisy, run_seed)


def _fit_once(spec: MethodSpec, train, weight, seed):
    if spec.name == "ridge":
        return solvers.solve_ridge(train, weight)
    if spec.name == "trace":
        m = min(train.d, train.c)
        return solvers.solve_trace(train, weight, spec.solver_config(weight, m, seed))
    config = spec.solver_config(weight, spec.k, seed)
    if spec.name == "kmsv":
        return solvers.solve_kmsv(train, config)
    return solvers.solve_kmsv_new(train, config)


def _tuning_split(train, fit_fraction, seed):
    """Per-task fit/validation split; tasks with a single sample stay in the fit part."""
    fit, val = [], []
    for t, task in enumerate(train):
        if task.n < 2:
            fit.append(task)
            val.append(None)
            continue
        rng = np.random.default_rng([seed, 0x7E5, t])
        perm = rng.permutation(task.n)
        n_fit = data_mod._n_train(task.n, fit_fraction)
        fit.append(task.subset(np.sort(perm[:n_fit])))
        val.append(task.subset(np.sort(perm[n_fit:])))
    return MultiTaskDataset(tuple(fit)), val


def select_hyperparameter(spec: MethodSpec, train, fit_fraction=0.8, seed=0):
    """Pick the grid value with the lowest validation error inside ``train``.

    The score is the squared error pooled over all held-out samples, which
    stays defined when a task keeps only one or two validation samples.
    Ties go to the earlier grid entry.
    """
    fit, val = _tuning_split(train, fit_fraction, seed)
    best, best_score = None, np.inf
    for value in spec.grid:
        params, _ = _fit_once(spec, fit, value, seed)
        score = 0.0
        for t, task in enumerate(val):
            if task is not None:
                score += float(np.sum((predict(params, t, task.X) - task.Y) ** 2))
        if score < best_score:
            best, best_score = value, score
    return best


def fit_method(spec: MethodSpec, train, seed=0, tuning_fraction=0.8):
    """Fit one method, tuning its weight first when a grid is given.

    Returns
    -------
    params, report, weight
    """
    weight = spec.weight
    if spec.grid:
        weight = select_hyperparameter(spec, train, tuning_fraction, seed)
    params, report = _fit_once(spec, train, weight, seed)
    return params, report, weight


def run_protocol(cfg: ExperimentConfig, dataset=None, W_star=None):
    """Fit and evaluate every (method, fraction, repetition) in memory.

    Returns a list of dicts with keys ``method``, ``train_fraction``,
    ``repetition``, ``weight``, ``params``, ``report`` and ``metrics``.
    """
    if dataset is None:
        dataset, W_star = build_dataset(cfg)
    rows = []
    for run in iter_runs(cfg, dataset):
        for spec in cfg.methods:
            params, report, weight = fit_method(spec, run.train, run.seed, cfg.tuning_fraction)
            metrics = evaluate(params, run.test, W_star)
            rows.append(
                dict(
                    method=spec.name,
                    train_fraction=run.train_fraction,
                    repetition=run.repetition,
                    weight=weight,
                    params=params,
                    report=report,
                    metrics=metrics,
                )
            )
    return rows
