"""Containers for multi-task regression data and fitted parameters.

Layout follows the column convention used throughout the package: a task's
feature matrix ``X`` is ``d x n_t`` (one sample per column) and its targets
``Y`` are ``c_t x n_t``.  The stacked weight matrix ``W`` is ``d x c`` with
task ``t`` occupying a contiguous block of ``c_t`` columns.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError

__all__ = ["TaskData", "MultiTaskDataset", "ModelParams"]


@dataclass(frozen=True)
class TaskData:
    X: np.ndarray
    Y: np.ndarray
    name: str = ""

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        Y = np.asarray(self.Y, dtype=float)
        if Y.ndim == 1:
            Y = Y[None, :]
        if X.ndim != 2 or Y.ndim != 2:
            raise InputError(f"task {self.name!r}: X and Y must be 2-d")
        if X.shape[1] != Y.shape[1]:
            raise InputError(
                f"task {self.name!r}: X has {X.shape[1]} samples but Y has {Y.shape[1]}"
            )
        if X.shape[1] < 1:
            raise InputError(f"task {self.name!r}: needs at least one sample")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise InputError(f"task {self.name!r}: non-finite values in X or Y")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)

    @property
    def d(self) -> int:
        return self.X.shape[0]

    @property
    def n(self) -> int:
        return self.X.shape[1]

    @property
    def c(self) -> int:
        return self.Y.shape[0]

    def subset(self, idx) -> "TaskData":
        idx = np.asarray(idx, dtype=int)
        return TaskData(self.X[:, idx], self.Y[:, idx], self.name)


@dataclass(frozen=True)
class MultiTaskDataset:
    tasks: tuple

    def __post_init__(self):
        tasks = tuple(self.tasks)
        if not tasks:
            raise InputError("dataset needs at least one task")
        d = tasks[0].d
        for t in tasks:
            if t.d != d:
                raise InputError(
                    f"task {t.name!r} has {t.d} features, expected {d}"
                )
        object.__setattr__(self, "tasks", tasks)

    @classmethod
    def from_arrays(cls, Xs, Ys, names=None):
        if names is None:
            names = [str(i) for i in range(len(Xs))]
        return cls(tuple(TaskData(X, Y, str(nm)) for X, Y, nm in zip(Xs, Ys, names)))

    @property
    def T(self) -> int:
        return len(self.tasks)

    @property
    def d(self) -> int:
        return self.tasks[0].d

    @property
    def c(self) -> int:
        return sum(t.c for t in self.tasks)

    @property
    def names(self):
        return [t.name for t in self.tasks]

    def blocks(self):
        """Column slices of the stacked ``W`` belonging to each task."""
        out, start = [], 0
        for t in self.tasks:
            out.append(slice(start, start + t.c))
            start += t.c
        return out

    def replace_tasks(self, tasks) -> "MultiTaskDataset":
        return MultiTaskDataset(tuple(tasks))

    def __len__(self):
        return self.T

    def __iter__(self):
        return iter(self.tasks)

    def __getitem__(self, i):
        return self.tasks[i]


@dataclass(frozen=True)
class ModelParams:
    """Stacked weights ``W`` (d x c) and one bias vector per task."""

    W: np.ndarray
    b: tuple
    blocks: tuple = field(default=())

    def __post_init__(self):
        W = np.asarray(self.W, dtype=float)
        b = tuple(np.atleast_1d(np.asarray(v, dtype=float)) for v in self.b)
        blocks = tuple(self.blocks)
        if not blocks:
            start, acc = 0, []
            for v in b:
                acc.append(slice(start, start + v.shape[0]))
                start += v.shape[0]
            blocks = tuple(acc)
        if W.ndim != 2 or sum(s.stop - s.start for s in blocks) != W.shape[1]:
            raise InputError("bias block widths do not match the columns of W")
        for s, v in zip(blocks, b):
            if s.stop - s.start != v.shape[0]:
                raise InputError("bias length does not match its weight block")
        if not (np.all(np.isfinite(W)) and all(np.all(np.isfinite(v)) for v in b)):
            raise InputError("model parameters contain non-finite values")
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "blocks", blocks)

    @property
    def T(self) -> int:
        return len(self.b)

    def task_weights(self, t) -> np.ndarray:
        return self.W[:, self.blocks[t]]
