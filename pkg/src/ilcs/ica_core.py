"""Latent-dimension estimation, whitening and symmetric FastICA.

ICA recovers the unmixing only up to row permutation and sign; nothing here
tries to resolve that (see :mod:`ilcs.alignment`).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from ._rng import make_rng

# E[log cosh(nu)] for nu ~ N(0, 1)
GAUSS_LOGCOSH = 0.3745672075


class RankDeficientError(ValueError):
    """Requested more components than the covariance supports."""

    def __init__(self, message: str, eigenvalues: np.ndarray):
        super().__init__(message)
        self.eigenvalues = eigenvalues


def _as_matrix(data) -> np.ndarray:
    X = np.asarray(getattr(data, "samples", data), dtype=float)
    if X.ndim != 2:
        raise ValueError(f"expected an n x p matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("data contains non-finite values")
    return X


def _covariance(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    center = X.mean(axis=0)
    Xc = X - center
    return center, Xc.T @ Xc / X.shape[0]


def _eigh_desc(cov: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    vals, vecs = np.linalg.eigh(cov)
    vals, vecs = vals[::-1], vecs[:, ::-1]
    # fix eigenvector signs so scaled copies of the data give the same basis
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return np.clip(vals, 0.0, None), vecs * signs


@dataclass(frozen=True)
class RankEstimate:
    d_hat: int
    eigenvalues: np.ndarray
    relative_threshold: float


def estimate_latent_dim(data, relative_threshold: float = 1e-6) -> RankEstimate:
    """Numerical rank of the sample covariance.

    Counts eigenvalues above ``relative_threshold * max eigenvalue``.
    """
    X = _as_matrix(data)
    if X.shape[0] < 2:
        raise ValueError("need at least 2 samples to estimate the covariance rank")
    _, cov = _covariance(X)
    vals, _ = _eigh_desc(cov)
    if vals[0] <= 0:
        return RankEstimate(0, vals, relative_threshold)
    d_hat = int(np.sum(vals > relative_threshold * vals[0]))
    return RankEstimate(min(d_hat, X.shape[0] - 1), vals, relative_threshold)


@dataclass(frozen=True)
class WhiteningTransform:
    """``y = matrix @ (x - center)`` has identity sample covariance."""

    center: np.ndarray
    matrix: np.ndarray  # d x p
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # p x d, retained basis

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.center) @ self.matrix.T


def fit_whitening(data, d: int) -> WhiteningTransform:
    """PCA whitening onto the top ``d`` eigenvectors of the sample covariance."""
    X = _as_matrix(data)
    center, cov = _covariance(X)
    vals, vecs = _eigh_desc(cov)
    if d < 1 or d > len(vals):
        raise ValueError(f"d must be in [1, {len(vals)}], got {d}")
    floor = 1e-12 * vals[0]
    if vals[d - 1] <= floor:
        raise RankDeficientError(
            f"requested d={d} exceeds the numerical rank of the covariance; "
            f"spectrum: {np.array2string(vals, precision=3)}",
            vals,
        )
    kept = np.maximum(vals[:d], floor)
    matrix = vecs[:, :d].T / np.sqrt(kept)[:, None]
    return WhiteningTransform(center, matrix, vals[:d], vecs[:, :d])


@dataclass
class IcaResult:
    """``sources = (X - center) @ unmixing.T``."""

    unmixing: np.ndarray  # d x p
    sources: np.ndarray  # n x d
    center: np.ndarray
    iterations: int
    converged: bool
    contrast: float
    convergence_trace: list[float] = field(default_factory=list)
    restarts: list[dict] = field(default_factory=list)

    @property
    def d(self) -> int:
        return self.unmixing.shape[0]


def _sym_decorrelate(W: np.ndarray) -> np.ndarray:
    # W <- (W W^T)^{-1/2} W
    s, u = np.linalg.eigh(W @ W.T)
    s = np.clip(s, np.finfo(float).tiny, None)
    return (u / np.sqrt(s)) @ u.T @ W


def _random_rotation(d: int, rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def _contrast(Y: np.ndarray) -> float:
    # negentropy proxy: sum_i (E G(y_i) - E G(nu))^2 with G = log cosh
    a = np.abs(Y)
    logcosh = a + np.log1p(np.exp(-2.0 * a)) - np.log(2.0)
    return float(np.sum((logcosh.mean(axis=0) - GAUSS_LOGCOSH) ** 2))


def _fastica_sym(Z: np.ndarray, W: np.ndarray, tol: float, max_iter: int):
    n = Z.shape[0]
    trace = []
    for it in range(1, max_iter + 1):
        gy = np.tanh(Z @ W.T)
        gprime = 1.0 - gy * gy
        W_new = _sym_decorrelate(gy.T @ Z / n - gprime.mean(axis=0)[:, None] * W)
        gap = 1.0 - float(np.min(np.abs(np.sum(W_new * W, axis=1))))
        trace.append(gap)
        W = W_new
        if gap <= tol:
            return W, it, True, trace
    return W, max_iter, False, trace


def run_fastica(
    data,
    d: int,
    *,
    tol: float = 1e-6,
    max_iter: int = 500,
    restarts: int = 3,
    rng_seed: int = 0,
    nonlinearity: str = "logcosh",
) -> IcaResult:
    """Symmetric fixed-point FastICA with the logcosh contrast.

    Runs ``restarts`` random orthogonal initialisations and keeps the one with
    the largest contrast among those that converged (or among all of them if
    none did, flagged ``converged=False``). Sources have unit variance.
    """
    if nonlinearity != "logcosh":
        raise ValueError(f"unsupported nonlinearity {nonlinearity!r}")
    if d < 1:
        raise ValueError("d must be >= 1")
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    X = _as_matrix(data)
    white = fit_whitening(X, d)
    Z = white.transform(X)
    rng = make_rng(rng_seed, "fastica")

    best = None
    summary = []
    for r in range(restarts):
        W0 = _random_rotation(d, rng)
        W, iters, conv, trace = _fastica_sym(Z, W0, tol, max_iter)
        score = _contrast(Z @ W.T)
        summary.append({"restart": r, "iterations": iters, "converged": conv, "contrast": score})
        key = (conv, score)
        if best is None or key > best[0]:
            best = (key, W, iters, conv, trace)

    _, W, iters, conv, trace = best
    unmixing = W @ white.matrix
    sources = (X - white.center) @ unmixing.T
    return IcaResult(
        unmixing=unmixing,
        sources=sources,
        center=white.center,
        iterations=iters,
        converged=conv,
        contrast=_contrast(Z @ W.T),
        convergence_trace=trace,
        restarts=summary,
    )


def amari_distance(M_est: np.ndarray, M_true: np.ndarray) -> float:
    """Normalised Amari index of ``M_est @ inv(M_true)``, in [0, 1].

    Zero iff the product is a scaled permutation matrix.
    """
    M_est = np.asarray(M_est, dtype=float)
    M_true = np.asarray(M_true, dtype=float)
    if M_est.shape != M_true.shape or M_est.ndim != 2 or M_est.shape[0] != M_est.shape[1]:
        raise ValueError("amari_distance needs two square matrices of equal size")
    d = M_est.shape[0]
    if np.linalg.matrix_rank(M_true) < d:
        raise ValueError("M_true is singular")
    if d == 1:
        return 0.0
    P = np.abs(M_est @ np.linalg.inv(M_true))
    rows = np.sum(P.sum(axis=1) / P.max(axis=1) - 1.0)
    cols = np.sum(P.sum(axis=0) / P.max(axis=0) - 1.0)
    return float((rows + cols) / (2.0 * d * (d - 1)))


def signed_permutation_gap(P: np.ndarray) -> tuple[float, np.ndarray]:
    """How far ``P`` is from a signed permutation.

    Matches rows to columns by maximum ``|P|`` (Hungarian) and returns the
    largest entrywise deviation from the matched ``+-1`` pattern together with
    the matched column per row.
    """
    A = np.abs(np.asarray(P, dtype=float))
    rows, cols = linear_sum_assignment(-A)
    target = np.zeros_like(A)
    target[rows, cols] = 1.0
    return float(np.max(np.abs(A - target))), cols
