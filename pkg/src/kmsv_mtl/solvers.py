"""Multi-task least-squares solvers with penalties on the spectrum tail.

Two algorithms minimise ``sum_t ||W_t' X_t + b_t 1' - Y_t||_F^2 + gamma * R(W)``:

* :func:`solve_kmsv` with ``R(W) = sum of the k smallest squared singular
  values``, by alternating an exact projector step and exact per-task
  ridge-type solves.
* :func:`solve_kmsv_new` with ``R(W) = sum of the k smallest singular
  values``, by writing the penalty as nuclear norm minus the top-``r``
  singular value sum and reweighting the nuclear norm.

Ridge and trace-norm baselines are provided for comparison.
"""

import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg

from . import spectral
from .errors import InputError, NumericalError, ParameterError
from .tasks import ModelParams, MultiTaskDataset, TaskData

__all__ = [
    "SolverConfig",
    "FitReport",
    "center_task",
    "update_task_weights",
    "loss",
    "objective_kmsv",
    "objective_kmsv_new",
    "solve_kmsv",
    "solve_kmsv_new",
    "solve_ridge",
    "solve_trace",
    "solve_least_squares",
    "DEFAULT_GAMMA_KMSV",
    "DEFAULT_GAMMA_KMSV_NEW",
]

DEFAULT_GAMMA_KMSV = 1e2
DEFAULT_GAMMA_KMSV_NEW = 1e4
INIT_MODES = ("zeros", "ridge", "random")


@dataclass(frozen=True)
class SolverConfig:
    """Settings shared by the iterative solvers.

    ``eps=None`` selects ``1e-8 * (1 + ||W0||_F^2 / d)`` computed once from
    the initial iterate.  ``init_lambda=None`` selects, per task,
    ``1e-3 * Tr(Xc Xc') / d``.  ``floor`` is the relative invertibility
    floor added to every per-task system; set it to 0 to disable.
    """

    gamma: float
    k: int
    max_iter: int = 100
    tol: float = 1e-7
    eps: float = None
    init: str = "ridge"
    init_lambda: float = None
    seed: int = 0
    floor: float = 1e-10

    def __post_init__(self):
        if not self.gamma >= 0:
            raise ParameterError(f"gamma={self.gamma} must be >= 0")
        if int(self.k) != self.k or self.k < 0:
            raise ParameterError(f"k={self.k} must be a non-negative integer")
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise ParameterError(f"max_iter={self.max_iter} must be >= 1")
        if not self.tol > 0:
            raise ParameterError(f"tol={self.tol} must be positive")
        if self.eps is not None and not self.eps > 0:
            raise ParameterError(f"eps={self.eps} must be positive")
        if self.init not in INIT_MODES:
            raise ParameterError(f"init={self.init!r} must be one of {INIT_MODES}")
        if self.init_lambda is not None and not self.init_lambda > 0:
            raise ParameterError(f"init_lambda={self.init_lambda} must be positive")
        if not self.floor >= 0:
            raise ParameterError(f"floor={self.floor} must be >= 0")

    def check(self, dataset: MultiTaskDataset):
        m = min(dataset.d, dataset.c)
        if self.k > m:
            raise ParameterError(f"k={self.k} exceeds min(d, c)={m}")


@dataclass
class FitReport:
    method: str
    objective_trace: list
    iterations: int
    converged: bool
    final_spectrum: spectral.SpectrumView
    wall_time: float
    initial_objective: float = float("nan")
    surrogate_trace: list = field(default_factory=list)
    eps: float = None


@dataclass(frozen=True)
class _Centered:
    xbar: np.ndarray
    ybar: np.ndarray
    Sxx: np.ndarray
    Sxy: np.ndarray


def center_task(task: TaskData):
    """Remove per-row means from a task's features and targets.

    Returns
    -------
    Xc, Yc, xbar, ybar
    """
    xbar = task.X.mean(axis=1)
    ybar = task.Y.mean(axis=1)
    return task.X - xbar[:, None], task.Y - ybar[:, None], xbar, ybar


def _centered(task):
    Xc, Yc, xbar, ybar = center_task(task)
    return _Centered(xbar, ybar, Xc @ Xc.T, Xc @ Yc.T)


def _solve_block(stats, M, gamma, C, floor, iteration=None):
    A = stats.Sxx + gamma * M if M is not None else stats.Sxx.copy()
    A = 0.5 * (A + A.T)
    d = A.shape[0]
    if floor:
        A[np.diag_indices(d)] += floor * np.trace(A) / d
    rhs = stats.Sxy if C is None else stats.Sxy + C
    try:
        Wt = linalg.solve(A, rhs, assume_a="sym")
    except (linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"per-task system is singular: {exc}", iteration) from exc
    if not np.all(np.isfinite(Wt)):
        raise NumericalError("per-task solve produced non-finite weights", iteration)
    bt = stats.ybar - Wt.T @ stats.xbar
    return Wt, bt


def update_task_weights(task: TaskData, M, gamma, C=None, floor=1e-10):
    """Closed-form weights and bias for one task.

    Solves ``(Xc Xc' + gamma M) W_t = Xc Yc' + C`` on mean-centred data, then
    recovers the bias as ``b_t = ybar - W_t' xbar``.  This is the joint
    minimiser over ``(W_t, b_t)`` of
    ``||W_t' X + b_t 1' - Y||^2 + gamma Tr(W_t' M W_t) - 2 Tr(W_t' C)``.

    Parameters
    ----------
    task : TaskData
    M : array (d, d) or None
        Symmetric PSD penalty matrix.
    gamma : float
    C : array (d, c_t), optional
        Linear term; zero when omitted.
    floor : float
        Relative diagonal floor ``floor * Tr(A) / d`` guarding singular systems.
    """
    if gamma < 0:
        raise ParameterError(f"gamma={gamma} must be >= 0")
    if M is not None and np.shape(M) != (task.d, task.d):
        raise InputError(f"penalty matrix must be {task.d}x{task.d}")
    if C is not None and np.shape(C) != (task.d, task.c):
        raise InputError(f"linear term must be {task.d}x{task.c}")
    return _solve_block(_centered(task), M, gamma, C, floor)


def loss(dataset: MultiTaskDataset, params: ModelParams) -> float:
    """Sum over tasks of squared residuals ``||W_t' X_t + b_t 1' - Y_t||_F^2``."""
    if params.W.shape != (dataset.d, dataset.c) or params.T != dataset.T:
        raise InputError(
            f"params W {params.W.shape} / {params.T} tasks do not match dataset "
            f"({dataset.d}, {dataset.c}) / {dataset.T} tasks"
        )
    total = 0.0
    for t, task in enumerate(dataset):
        R = params.task_weights(t).T @ task.X + params.b[t][:, None] - task.Y
        total += float(np.sum(R * R))
    return total


def objective_kmsv(dataset, params, gamma, k) -> float:
    return loss(dataset, params) + gamma * spectral.ksmallest_sq_sum(params.W, k)


def objective_kmsv_new(dataset, params, gamma, k) -> float:
    return loss(dataset, params) + gamma * spectral.ksmallest_sum(params.W, k)


def _assemble(dataset, blocks, Ws, bs):
    W = np.empty((dataset.d, dataset.c))
    for s, Wt in zip(blocks, Ws):
        W[:, s] = Wt
    return ModelParams(W, tuple(bs), tuple(blocks))


def _initial_params(dataset, stats, config):
    blocks = dataset.blocks()
    d = dataset.d
    if config.init == "zeros":
        Ws = [np.zeros((d, task.c)) for task in dataset]
    elif config.init == "random":
        rng = np.random.default_rng([config.seed, 0x1417])
        Ws = [rng.standard_normal((d, task.c)) / np.sqrt(d) for task in dataset]
    else:
        Ws = []
        for st in stats:
            lam = config.init_lambda
            if lam is None:
                lam = 1e-3 * np.trace(st.Sxx) / d
                if lam <= 0:
                    lam = 1e-3
            A = st.Sxx + lam * np.eye(d)
            Ws.append(linalg.solve(A, st.Sxy, assume_a="pos"))
    bs = [st.ybar - Wt.T @ st.xbar for st, Wt in zip(stats, Ws)]
    return _assemble(dataset, blocks, Ws, bs)


def _converged(obj, prev, tol):
    return abs(obj - prev) / (1.0 + abs(prev)) < tol


def solve_kmsv(dataset: MultiTaskDataset, config: SolverConfig):
    """Minimise squared loss plus ``gamma`` times the k smallest squared singular values.

    Each sweep takes the projector ``F F'`` onto the tail of ``W W'`` and
    then solves every task exactly with penalty ``gamma * F F'``.  Both
    steps are exact block minimisers, so the objective never increases.

    Returns
    -------
    params : ModelParams
    report : FitReport
    """
    config.check(dataset)
    start = time.perf_counter()
    stats = [_centered(task) for task in dataset]
    blocks = dataset.blocks()
    params = _initial_params(dataset, stats, config)
    prev = objective_kmsv(dataset, params, config.gamma, config.k)
    initial = prev
    trace, converged = [], False
    for it in range(1, config.max_iter + 1):
        try:
            P = spectral.tail_projector(params.W, config.k).matrix
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"eigendecomposition failed: {exc}", it) from exc
        Ws, bs = [], []
        for st in stats:
            Wt, bt = _solve_block(st, P, config.gamma, None, config.floor, it)
            Ws.append(Wt)
            bs.append(bt)
        params = _assemble(dataset, blocks, Ws, bs)
        obj = objective_kmsv(dataset, params, config.gamma, config.k)
        trace.append(obj)
        if _converged(obj, prev, config.tol):
            converged = True
            break
        prev = obj
    report = FitReport(
        method="kmsv",
        objective_trace=trace,
        iterations=len(trace),
        converged=converged,
        final_spectrum=spectral.singular_spectrum(params.W),
        wall_time=time.perf_counter() - start,
        initial_objective=initial,
    )
    return params, report


def _surrogate(dataset, params, gamma, factors):
    """Nuclear norm minus top-r trace form, for fixed ``(F, G)``."""
    W = params.W
    nuc = float(np.sum(np.linalg.svd(W, compute_uv=False)))
    lin = float(np.trace(factors.F.T @ W @ factors.G)) if factors.r else 0.0
    return loss(dataset, params) + gamma * (nuc - lin)


def solve_kmsv_new(dataset: MultiTaskDataset, config: SolverConfig, method="kmsv-new"):
    """Minimise squared loss plus ``gamma`` times the k smallest singular values.

    The penalty is rewritten as ``||W||_* - max Tr(F' W G)`` over
    column-orthonormal ``F, G`` with ``r = min(d, c) - k`` columns.  Each
    sweep refreshes ``(F, G)`` from the SVD of ``W``, builds the reweighting
    matrix ``D`` at the current ``W`` and solves every task with
    ``(Xc Xc' + gamma D) W_t = Xc Yc' + gamma/2 F G_t'``.
    """
    config.check(dataset)
    start = time.perf_counter()
    stats = [_centered(task) for task in dataset]
    blocks = dataset.blocks()
    r = min(dataset.d, dataset.c) - config.k
    params = _initial_params(dataset, stats, config)
    eps = config.eps if config.eps is not None else spectral.default_eps(params.W)
    prev = objective_kmsv_new(dataset, params, config.gamma, config.k)
    initial = prev
    trace, surrogate, converged = [], [], False
    for it in range(1, config.max_iter + 1):
        try:
            factors = spectral.top_singular_factors(params.W, r)
            D = spectral.reweight_matrix(params.W, eps).matrix
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"spectral step failed: {exc}", it) from exc
        Ws, bs = [], []
        for st, s in zip(stats, blocks):
            C = 0.5 * config.gamma * factors.F @ factors.G[s].T if r else None
            Wt, bt = _solve_block(st, D, config.gamma, C, config.floor, it)
            Ws.append(Wt)
            bs.append(bt)
        params = _assemble(dataset, blocks, Ws, bs)
        obj = objective_kmsv_new(dataset, params, config.gamma, config.k)
        trace.append(obj)
        surrogate.append(_surrogate(dataset, params, config.gamma, factors))
        if _converged(obj, prev, config.tol):
            converged = True
            break
        prev = obj
    report = FitReport(
        method=method,
        objective_trace=trace,
        iterations=len(trace),
        converged=converged,
        final_spectrum=spectral.singular_spectrum(params.W),
        wall_time=time.perf_counter() - start,
        initial_objective=initial,
        surrogate_trace=surrogate,
        eps=eps,
    )
    return params, report


def solve_trace(dataset: MultiTaskDataset, gamma, config: SolverConfig = None):
    """Trace-norm regularised MTL: :func:`solve_kmsv_new` with ``k = min(d, c)``."""
    m = min(dataset.d, dataset.c)
    if config is None:
        config = SolverConfig(gamma=gamma, k=m)
    else:
        config = replace(config, gamma=gamma, k=m)
    return solve_kmsv_new(dataset, config, method="trace")


def solve_ridge(dataset: MultiTaskDataset, lam=1.0):
    """Independent per-task ridge regression with unpenalised biases."""
    if not lam > 0:
        raise ParameterError(f"ridge lambda={lam} must be positive")
    start = time.perf_counter()
    eye = np.eye(dataset.d)
    Ws, bs = [], []
    for task in dataset:
        Wt, bt = _solve_block(_centered(task), eye, lam, None, 0.0)
        Ws.append(Wt)
        bs.append(bt)
    params = _assemble(dataset, dataset.blocks(), Ws, bs)
    obj = loss(dataset, params) + lam * float(np.sum(params.W ** 2))
    report = FitReport(
        method="ridge",
        objective_trace=[obj],
        iterations=1,
        converged=True,
        final_spectrum=spectral.singular_spectrum(params.W),
        wall_time=time.perf_counter() - start,
        initial_objective=obj,
    )
    return params, report


def solve_least_squares(dataset: MultiTaskDataset):
    """Unregularised per-task least squares (with bias); reference for decoupling checks."""
    Ws, bs = [], []
    for task in dataset:
        Xc, Yc, xbar, ybar = center_task(task)
        Wt = np.linalg.lstsq(Xc.T, Yc.T, rcond=None)[0]
        Ws.append(Wt)
        bs.append(ybar - Wt.T @ xbar)
    return _assemble(dataset, dataset.blocks(), Ws, bs)
