"""Spectral primitives for penalties on the smallest singular values.

Singular values are always reported in ascending order, so ``values[:k]``
are the ``k`` smallest.  All functions are pure and operate on dense real
``numpy`` arrays.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InputError, ParameterError

__all__ = [
    "SpectrumView",
    "Projector",
    "FactorPair",
    "ReweightMatrix",
    "singular_spectrum",
    "ksmallest_sq_sum",
    "ksmallest_sum",
    "projector_complement",
    "tail_projector",
    "top_singular_factors",
    "reweight_matrix",
    "default_eps",
]


@dataclass(frozen=True)
class SpectrumView:
    """Ascending singular values of a ``rows x cols`` matrix."""

    values: np.ndarray
    dims: tuple

    @property
    def m(self) -> int:
        return min(self.dims)

    def descending(self) -> np.ndarray:
        return self.values[::-1].copy()


@dataclass(frozen=True)
class Projector:
    """Orthogonal projector ``F F'`` onto a ``subspace_dim``-dimensional subspace."""

    matrix: np.ndarray
    subspace_dim: int


@dataclass(frozen=True)
class FactorPair:
    """Column-orthonormal ``F`` (d x r) and ``G`` (c x r)."""

    F: np.ndarray
    G: np.ndarray
    r: int


@dataclass(frozen=True)
class ReweightMatrix:
    """``D = 1/2 (W W' + eps I)^{-1/2}``."""

    matrix: np.ndarray
    floor: float


def _as_matrix(W) -> np.ndarray:
    W = np.asarray(W, dtype=float)
    if W.ndim != 2:
        raise InputError(f"expected a 2-d matrix, got shape {W.shape}")
    if not np.all(np.isfinite(W)):
        raise InputError("matrix contains non-finite entries")
    return W


def _check_k(k, upper, name="k"):
    if int(k) != k or not 0 <= k <= upper:
        raise ParameterError(f"{name}={k} must be an integer in [0, {upper}]")
    return int(k)


def singular_spectrum(W) -> SpectrumView:
    """Return all ``min(d, c)`` singular values of ``W`` in ascending order."""
    W = _as_matrix(W)
    if W.size == 0:
        return SpectrumView(np.zeros(0), W.shape)
    s = np.linalg.svd(W, compute_uv=False)
    return SpectrumView(np.sort(s), W.shape)


def ksmallest_sq_sum(W, k) -> float:
    """Sum of the ``k`` smallest squared singular values of ``W``."""
    spec = singular_spectrum(W)
    k = _check_k(k, spec.m)
    return float(np.sum(spec.values[:k] ** 2))


def ksmallest_sum(W, k) -> float:
    """Sum of the ``k`` smallest singular values of ``W``.

    With ``k = min(d, c)`` this is the nuclear norm.
    """
    spec = singular_spectrum(W)
    k = _check_k(k, spec.m)
    return float(np.sum(spec.values[:k]))


def projector_complement(W, k) -> Projector:
    """Projector onto the ``k`` smallest-eigenvalue eigenvectors of ``W W'``.

    Built as ``I - U3 U3'`` where ``U3`` holds the ``d - k`` leading
    eigenvectors, which is cheap when the retained rank ``d - k`` is small.
    Under eigenvalue ties at the cut any valid eigenbasis may be returned.

    Parameters
    ----------
    W : array, shape (d, c)
    k : int
        Dimension of the returned subspace, ``0 <= k <= d``.
    """
    W = _as_matrix(W)
    d = W.shape[0]
    k = _check_k(k, d)
    _, U = np.linalg.eigh(W @ W.T)
    U3 = U[:, k:]
    P = np.eye(d) - U3 @ U3.T
    return Projector(0.5 * (P + P.T), k)


def tail_projector(W, k) -> Projector:
    """Projector ``F F'`` attaining the ``k``-smallest squared singular value sum.

    ``W W'`` has ``d - min(d, c)`` structurally zero eigenvalues when
    ``d > c``; those directions are always inside ``F`` so that
    ``Tr(P W W') == ksmallest_sq_sum(W, k)`` for every ``0 <= k <= min(d, c)``.
    """
    W = _as_matrix(W)
    d, c = W.shape
    m = min(d, c)
    k = _check_k(k, m)
    return projector_complement(W, k + d - m)


def top_singular_factors(W, r) -> FactorPair:
    """Left/right singular vectors of the ``r`` largest singular values.

    ``Tr(F' W G)`` equals the sum of those ``r`` singular values.
    """
    W = _as_matrix(W)
    d, c = W.shape
    r = _check_k(r, min(d, c), name="r")
    if r == 0:
        return FactorPair(np.zeros((d, 0)), np.zeros((c, 0)), 0)
    U, _, Vt = np.linalg.svd(W, full_matrices=False)
    return FactorPair(U[:, :r].copy(), Vt[:r].T.copy(), r)


def default_eps(W) -> float:
    """Reweighting floor ``1e-8 * (1 + ||W||_F^2 / d)``."""
    W = np.asarray(W, dtype=float)
    return 1e-8 * (1.0 + float(np.sum(W * W)) / W.shape[0])


def reweight_matrix(Wtilde, eps) -> ReweightMatrix:
    """Reweighting matrix ``D = 1/2 (W~ W~' + eps I)^{-1/2}``.

    The ``eps`` floor keeps ``D`` finite while the iterate loses rank.  The
    eigenpairs are taken from the full SVD of ``W~`` (eigenvalues
    ``s^2 + eps``) rather than from the explicitly formed Gram matrix, where
    adding a tiny ``eps`` to O(||W~||^2) entries would round it away.
    """
    Wtilde = _as_matrix(Wtilde)
    if not eps > 0:
        raise ParameterError(f"eps={eps} must be positive")
    d, c = Wtilde.shape
    U, s, _ = np.linalg.svd(Wtilde, full_matrices=True)
    lam = np.full(d, float(eps))
    lam[: len(s)] += s * s
    D = (U * (0.5 / np.sqrt(lam))) @ U.T
    return ReweightMatrix(0.5 * (D + D.T), float(eps))
