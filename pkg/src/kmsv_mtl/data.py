"""Synthetic low-rank task generation, task CSV I/O, splitting and label noise.

Every random operation draws from its own generator seeded with
``(seed, <operation tag>[, task index])`` so results do not depend on call
order or on what else ran in the same process.
"""

import csv
import math
import re
from dataclasses import dataclass

import numpy as np

from .errors import DataFormatError, ParameterError
from .tasks import MultiTaskDataset, TaskData

__all__ = [
    "SyntheticGroundTruth",
    "SplitSpec",
    "NoiseSpec",
    "generate_synthetic",
    "load_csv_tasks",
    "write_csv_tasks",
    "split_train_test",
    "inject_label_noise",
    "zscore_features",
]

_TAG_SYNTH = 0x5E7
_TAG_SPLIT = 0x5B1
_TAG_NOISE = 0x401


@dataclass(frozen=True)
class SyntheticGroundTruth:
    W_star: np.ndarray
    rank: int
    noise_std: float
    seed: int


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float
    seed: int = 0
    per_task: bool = True

    def __post_init__(self):
        if not 0 < self.train_fraction < 1:
            raise ParameterError(
                f"train_fraction={self.train_fraction} must lie in (0, 1)"
            )


@dataclass(frozen=True)
class NoiseSpec:
    """Additive Gaussian label noise on a random subset of tasks.

    ``parameterization`` says how the second moment is read: ``"variance"``
    (default, so ``N(1, 2)`` has variance 2) or ``"std"``.
    """

    task_fraction: float = 0.3
    mean: float = 1.0
    variance: float = 2.0
    seed: int = 0
    parameterization: str = "variance"

    def __post_init__(self):
        if not 0 <= self.task_fraction <= 1:
            raise ParameterError(f"task_fraction={self.task_fraction} must lie in [0, 1]")
        if not self.variance >= 0:
            raise ParameterError(f"variance={self.variance} must be >= 0")
        if self.parameterization not in ("variance", "std"):
            raise ParameterError(
                f"parameterization={self.parameterization!r} must be 'variance' or 'std'"
            )

    @property
    def std(self) -> float:
        if self.parameterization == "std":
            return float(self.variance)
        return math.sqrt(self.variance)


def generate_synthetic(T=25, d=100, n=400, rank=5, noise_std=1.0, seed=0):
    """Draw ``T`` scalar regression tasks sharing a rank-``rank`` weight matrix.

    ``X_t`` has i.i.d. standard normal entries, ``W* = A B'`` with Gaussian
    factors ``A`` (d x rank) and ``B`` (T x rank), and
    ``y_t = w*_t' X_t + noise_std * N(0, 1)``.

    Returns
    -------
    dataset : MultiTaskDataset
    truth : SyntheticGroundTruth
    """
    if T < 1 or d < 1 or n < 1:
        raise ParameterError("T, d and n must all be >= 1")
    if not 0 <= rank <= min(d, T):
        raise ParameterError(f"rank={rank} must lie in [0, min(d, T)={min(d, T)}]")
    if noise_std < 0:
        raise ParameterError(f"noise_std={noise_std} must be >= 0")
    rng = np.random.default_rng([seed, _TAG_SYNTH])
    A = rng.standard_normal((d, rank))
    B = rng.standard_normal((T, rank))
    W_star = A @ B.T
    tasks = []
    for t in range(T):
        X = rng.standard_normal((d, n))
        y = W_star[:, t] @ X + noise_std * rng.standard_normal(n)
        tasks.append(TaskData(X, y[None, :], str(t)))
    return MultiTaskDataset(tuple(tasks)), SyntheticGroundTruth(W_star, rank, noise_std, seed)


_FEATURE = re.compile(r"^f(\d+)$")
_TARGET = re.compile(r"^y(\d+)$")


def _numbered(header, pattern, label):
    cols = {}
    for i, name in enumerate(header):
        m = pattern.match(name)
        if m:
            cols[int(m.group(1))] = i
    if not cols:
        return []
    if sorted(cols) != list(range(1, len(cols) + 1)):
        raise DataFormatError(
            f"{label} columns must be numbered consecutively from 1, got {sorted(cols)}"
        )
    return [cols[j] for j in range(1, len(cols) + 1)]


def load_csv_tasks(path) -> MultiTaskDataset:
    """Read a task CSV with columns ``task_id``, ``y`` (or ``y1..yc``), ``f1..fd``.

    Tasks appear in order of first occurrence; rows keep file order within a
    task.  Row numbers in error messages count the header as row 1.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        if "task_id" not in header:
            raise DataFormatError(f"{path}: missing 'task_id' column")
        tid_col = header.index("task_id")
        if "y" in header:
            y_cols = [header.index("y")]
        else:
            y_cols = _numbered(header, _TARGET, "target")
        if not y_cols:
            raise DataFormatError(f"{path}: missing target column 'y' or 'y1'..")
        f_cols = _numbered(header, _FEATURE, "feature")
        if not f_cols:
            raise DataFormatError(f"{path}: missing feature columns 'f1'..")
        groups = {}
        for rowno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise DataFormatError(
                    f"{path}: row {rowno} has {len(row)} cells, header has {len(header)}"
                )
            try:
                f = [float(row[j]) for j in f_cols]
                y = [float(row[j]) for j in y_cols]
            except ValueError as exc:
                raise DataFormatError(f"{path}: row {rowno}: {exc}") from None
            if not all(math.isfinite(v) for v in f + y):
                raise DataFormatError(f"{path}: row {rowno}: non-finite value")
            groups.setdefault(row[tid_col].strip(), ([], []))
            groups[row[tid_col].strip()][0].append(f)
            groups[row[tid_col].strip()][1].append(y)
    if not groups:
        raise DataFormatError(f"{path}: no data rows")
    tasks = tuple(
        TaskData(np.array(fs).T, np.array(ys).T, name) for name, (fs, ys) in groups.items()
    )
    return MultiTaskDataset(tasks)


def write_csv_tasks(dataset: MultiTaskDataset, path):
    """Write ``dataset`` in the task CSV layout read by :func:`load_csv_tasks`."""
    c_max = max(t.c for t in dataset)
    if any(t.c != c_max for t in dataset):
        raise ParameterError("CSV layout needs the same output count for every task")
    y_names = ["y"] if c_max == 1 else [f"y{j + 1}" for j in range(c_max)]
    header = ["task_id"] + y_names + [f"f{j + 1}" for j in range(dataset.d)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for task in dataset:
            for i in range(task.n):
                w.writerow(
                    [task.name]
                    + [repr(float(v)) for v in task.Y[:, i]]
                    + [repr(float(v)) for v in task.X[:, i]]
                )


def _n_train(n, fraction):
    return min(max(int(math.floor(n * fraction + 0.5)), 1), n - 1)


def split_train_test(dataset: MultiTaskDataset, spec: SplitSpec):
    """Random per-task train/test partition.

    Each task keeps ``round_half_up(n_t * fraction)`` training samples,
    clamped to ``[1, n_t - 1]``; sample order is preserved on both sides.
    """
    train, test = [], []
    if spec.per_task:
        for t, task in enumerate(dataset):
            if task.n < 2:
                raise ParameterError(
                    f"task {task.name!r} has {task.n} sample(s); need >= 2 to split"
                )
            rng = np.random.default_rng([spec.seed, _TAG_SPLIT, t])
            perm = rng.permutation(task.n)
            n_tr = _n_train(task.n, spec.train_fraction)
            train.append(task.subset(np.sort(perm[:n_tr])))
            test.append(task.subset(np.sort(perm[n_tr:])))
    else:
        sizes = [task.n for task in dataset]
        total = sum(sizes)
        rng = np.random.default_rng([spec.seed, _TAG_SPLIT])
        chosen = np.zeros(total, dtype=bool)
        chosen[rng.permutation(total)[: _n_train(total, spec.train_fraction)]] = True
        offset = 0
        for task, n in zip(dataset, sizes):
            mask = chosen[offset : offset + n]
            offset += n
            if mask.all() or not mask.any():
                raise ParameterError(
                    f"pooled split left task {task.name!r} without train or test samples"
                )
            train.append(task.subset(np.flatnonzero(mask)))
            test.append(task.subset(np.flatnonzero(~mask)))
    return MultiTaskDataset(tuple(train)), MultiTaskDataset(tuple(test))


def noisy_task_count(T, task_fraction) -> int:
    # guard against 0.3 * 10 = 3.0000000000000004
    return min(T, int(math.ceil(task_fraction * T - 1e-9)))


def inject_label_noise(dataset: MultiTaskDataset, spec: NoiseSpec):
    """Add Gaussian noise to the targets of ``ceil(fraction * T)`` random tasks.

    Returns
    -------
    noisy : MultiTaskDataset
        New dataset; untouched tasks are the original objects.
    selected : ndarray of int
        Sorted indices of the corrupted tasks.
    """
    T = dataset.T
    count = noisy_task_count(T, spec.task_fraction)
    rng = np.random.default_rng([spec.seed, _TAG_NOISE])
    selected = np.sort(rng.choice(T, size=count, replace=False)) if count else np.zeros(0, int)
    tasks = list(dataset.tasks)
    for t in selected:
        task = tasks[t]
        noise_rng = np.random.default_rng([spec.seed, _TAG_NOISE, int(t)])
        noise = spec.mean + spec.std * noise_rng.standard_normal(task.Y.shape)
        tasks[t] = TaskData(task.X, task.Y + noise, task.name)
    return MultiTaskDataset(tuple(tasks)), selected


def zscore_features(train: MultiTaskDataset, *others):
    """Standardise features with means/stds pooled over all training samples.

    The same transform is applied to every dataset in ``others``.
    Constant features are centred but not scaled.
    """
    Xall = np.concatenate([t.X for t in train], axis=1)
    mu = Xall.mean(axis=1, keepdims=True)
    sd = Xall.std(axis=1, keepdims=True)
    sd[sd == 0] = 1.0

    def apply(ds):
        return MultiTaskDataset(
            tuple(TaskData((t.X - mu) / sd, t.Y, t.name) for t in ds)
        )

    out = [apply(train)] + [apply(ds) for ds in others]
    return out[0] if not others else tuple(out)
