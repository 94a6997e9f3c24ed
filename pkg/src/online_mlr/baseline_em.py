"""Batch EM on a fixed sample ("population EM" at finite n), the usual baseline.

Iteration ``t`` computes responsibilities from the current pair
``(beta_t1, beta_t2)`` and refits each component by weighted least squares.
``sigma^2`` is known and no damping is applied.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .asym_em import align_error
from .exceptions import SingularGramError

GRAM_RTOL = 1e-10


@dataclass(frozen=True)
class PopEmState:
    beta1: np.ndarray
    beta2: np.ndarray
    t: int = 0


def _weights(beta1, beta2, phi, y, sigma2, mode="stable"):
    l1 = -((y - phi @ beta1) ** 2) / (2.0 * sigma2)
    l2 = -((y - phi @ beta2) ** 2) / (2.0 * sigma2)
    if mode == "stable":
        m = np.maximum(l1, l2)
        e1, e2 = np.exp(l1 - m), np.exp(l2 - m)
    elif mode == "unnormalized":
        # ablation: the textbook formula evaluated as written, which underflows
        # to 0/0 once both residuals exceed roughly 38 sigma
        with np.errstate(invalid="ignore", under="ignore"):
            e1, e2 = np.exp(l1), np.exp(l2)
    else:
        raise ValueError(f"unknown e-step mode {mode!r}")
    with np.errstate(invalid="ignore"):
        total = e1 + e2
        return e1 / total, e2 / total


def e_step(state: PopEmState, phi, y, sigma2, mode: str = "stable"):
    """Responsibility of component 1 for every sample."""
    return _weights(state.beta1, state.beta2, np.asarray(phi, float), np.asarray(y, float),
                    sigma2, mode)[0]


def _weighted_ls(phi, y, w):
    n = phi.shape[0]
    gram = (phi * w[:, None]).T @ phi / n
    rhs = (phi * w[:, None]).T @ y / n
    if not (np.all(np.isfinite(gram)) and np.all(np.isfinite(rhs))):
        raise SingularGramError("non-finite weighted Gram matrix")
    trace = np.trace(gram)
    if not np.linalg.eigvalsh(gram)[0] > GRAM_RTOL * trace:
        raise SingularGramError("weighted Gram matrix is singular")
    return np.linalg.solve(gram, rhs)


def m_step(phi, y, alpha, which: int = 1):
    """Weighted LS refit of one component (weights ``alpha`` or ``1 - alpha``)."""
    alpha = np.asarray(alpha, dtype=float)
    w = alpha if which == 1 else 1.0 - alpha
    return _weighted_ls(np.asarray(phi, float), np.asarray(y, float), w)


@dataclass
class PopEmResult:
    beta1: np.ndarray
    beta2: np.ndarray
    iterations: int
    aborted: bool
    converged: bool | None = None
    err1: float = float("nan")
    err2: float = float("nan")


def fit(phi, y, init, T: int, sigma2: float, truth=None, tol: float = 0.05,
        mode: str = "stable") -> PopEmResult:
    """Run ``T`` EM iterations from ``init = (beta1, beta2)``.

    A singular weighted Gram matrix stops the run, which is then recorded as
    aborted and non-convergent.  With ``truth = (beta1*, beta2*)`` the result
    carries the aligned errors and ``converged`` is True iff both are below
    ``tol * max(||beta1*||, ||beta2*||)``.
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    # contiguous copies keep BLAS rounding independent of the caller's memory layout
    phi = np.ascontiguousarray(phi, dtype=float)
    y = np.ascontiguousarray(y, dtype=float)
    b1 = np.array(init[0], dtype=float)
    b2 = np.array(init[1], dtype=float)
    aborted = False
    t = 0
    for t in range(1, T + 1):
        w1, w2 = _weights(b1, b2, phi, y, sigma2, mode)
        try:
            b1, b2 = _weighted_ls(phi, y, w1), _weighted_ls(phi, y, w2)
        except SingularGramError:
            aborted = True
            break
    result = PopEmResult(b1, b2, t, aborted)
    if truth is not None:
        err1, err2, _ = align_error(b1, b2, truth[0], truth[1])
        scale = tol * max(np.linalg.norm(truth[0]), np.linalg.norm(truth[1]))
        result.err1, result.err2 = err1, err2
        result.converged = (not aborted) and err1 < scale and err2 < scale
    return result
