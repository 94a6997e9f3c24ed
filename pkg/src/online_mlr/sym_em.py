"""Online EM for the symmetric model ``y = z beta*' phi + w``.

Each step forms the EM pseudo-output ``ybar = y tanh(beta' phi y / sigma^2)``
and feeds it to an ordinary recursive-least-squares update::

    a_k       = 1 / (1 + phi' P_k phi)
    beta_{k+1} = beta_k + a_k P_k phi (ybar - beta_k' phi)
    P_{k+1}    = P_k - a_k P_k phi phi' P_k

The recursion is odd in ``beta`` (so ``0`` is a fixed point and ``-beta``
runs mirror ``beta`` runs exactly).  ``sigma^2`` is a known input.

All state arrays may carry leading batch axes; a batch of independent
streams is advanced with one call.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from ._io import write_csv
from ._linalg import dot, is_spd, matvec, rls_covariance_update, rls_gain
from .exceptions import ConfigError, SingularGramError

TANH_CLAMP = 500.0


@dataclass(frozen=True)
class SymState:
    beta: np.ndarray
    P: np.ndarray
    sigma2: float
    k: int = 0

    @classmethod
    def initial(cls, beta0, sigma2: float, P0=None) -> SymState:
        """Validated starting state; ``P0`` defaults to the identity."""
        beta0 = np.array(beta0, dtype=float)
        d = beta0.shape[-1]
        if not sigma2 > 0:
            raise ConfigError(f"sigma2 must be positive, got {sigma2}")
        if np.any(np.all(beta0 == 0, axis=-1)):
            raise ConfigError("beta0 = 0 is a fixed point of the recursion; start elsewhere")
        P0 = np.eye(d) if P0 is None else np.asarray(P0, dtype=float)
        P0 = np.broadcast_to(P0, beta0.shape[:-1] + (d, d)).copy()
        if not np.all(is_spd(P0)):
            raise ConfigError("P0 must be symmetric positive definite")
        return cls(beta0, P0, float(sigma2), 0)


def _tanh_arg(beta, phi, y, sigma2):
    return np.clip(dot(beta, phi) * y / sigma2, -TANH_CLAMP, TANH_CLAMP)


def responsibility(beta, phi, y, sigma2):
    """Posterior probability that the sample came from the ``+beta`` branch."""
    return expit(2.0 * _tanh_arg(beta, phi, y, sigma2))


def ybar(beta, phi, y, sigma2):
    """EM pseudo-output ``y tanh(beta' phi y / sigma^2) = (2 * responsibility - 1) y``."""
    return y * np.tanh(_tanh_arg(beta, phi, y, sigma2))


def _update(beta, P, phi, y, sigma2):
    a, Pphi = rls_gain(P, phi)
    innovation = ybar(beta, phi, y, sigma2) - dot(beta, phi)
    beta = beta + (a * innovation)[..., None] * Pphi
    return beta, rls_covariance_update(P, a, Pphi)


def step(state: SymState, phi, y) -> SymState:
    phi = np.asarray(phi, dtype=float)
    if phi.shape[-1] != state.beta.shape[-1]:
        raise ValueError(f"phi has dimension {phi.shape[-1]}, expected {state.beta.shape[-1]}")
    beta, P = _update(state.beta, state.P, phi, y, state.sigma2)
    return SymState(beta, P, state.sigma2, state.k + 1)


@dataclass
class SymRun:
    state: SymState
    beta: np.ndarray                # final estimate in the original regressor coordinates
    path: np.ndarray | None = None  # pre-update estimates beta_k, shape (n, ..., d)


def run(state: SymState, phi, y, whitener=None, keep_path: bool = False) -> SymRun:
    """Feed a time-major block (``phi`` of shape ``(n, ..., d)``) through :func:`step`.

    With a :class:`~online_mlr.whitening.Whitener` the recursion runs on
    whitened regressors; ``beta`` and ``path`` are mapped back so that
    ``path[k] @ phi[k]`` is the prediction the estimator actually used.
    """
    phi = np.asarray(phi, dtype=float)
    y = np.asarray(y, dtype=float)
    beta, P, sigma2 = state.beta, state.P, state.sigma2
    path = np.empty(phi.shape[:1] + beta.shape) if keep_path else None
    root = None
    for k in range(phi.shape[0]):
        x = phi[k]
        if whitener is not None:
            x, root = whitener(x)
        if keep_path:
            path[k] = beta if root is None else matvec(root, beta)
        beta, P = _update(beta, P, x, y[k], sigma2)
    final = SymState(beta, P, sigma2, state.k + phi.shape[0])
    original = beta if root is None else matvec(root, beta)
    return SymRun(final, original, path)


def aligned_error(beta, beta_star):
    """``min(||beta - beta*||, ||beta + beta*||)``: distance to the nearer limit point."""
    return np.minimum(np.linalg.norm(beta - beta_star, axis=-1),
                      np.linalg.norm(beta + beta_star, axis=-1))


def _solve_gram(gram, rhs):
    w = np.linalg.eigvalsh(gram)
    if not w[0] > 1e-12 * max(w[-1], 0.0) or w[-1] <= 0:
        raise SingularGramError("sum of phi phi' is singular")
    return np.linalg.solve(gram, rhs)


def batch_mle_iterate(phi, y, beta_t, sigma2):
    """Offline M-step ``(sum phi phi')^{-1} sum phi y tanh(beta_t' phi y / sigma^2)``.

    ``beta_t`` is either one vector or one vector per sample (shape ``(n, d)``).
    """
    phi = np.atleast_2d(np.asarray(phi, dtype=float))
    targets = ybar(beta_t, phi, np.asarray(y, dtype=float), sigma2)
    return _solve_gram(phi.T @ phi, phi.T @ targets)


def regularized_batch_ls(phi, targets, P0, beta0):
    """Closed form of RLS started from ``(beta0, P0)`` on outputs ``targets``.

    ``(P0^{-1} + Psi' Psi)^{-1} (P0^{-1} beta0 + Psi' targets)``.
    """
    phi = np.atleast_2d(np.asarray(phi, dtype=float))
    P0_inv = np.linalg.inv(P0)
    return np.linalg.solve(P0_inv + phi.T @ phi, P0_inv @ beta0 + phi.T @ targets)


def log_likelihood(beta, phi, y, sigma2):
    """Log-likelihood of the balanced symmetric mixture."""
    phi = np.atleast_2d(phi)
    m = phi @ beta
    log_norm = -0.5 * np.log(2.0 * np.pi * sigma2) + np.log(0.5)
    terms = np.logaddexp(-(y - m) ** 2 / (2 * sigma2), -(y + m) ** 2 / (2 * sigma2))
    return float(np.sum(terms + log_norm))


def score(beta, phi, y, sigma2):
    """Gradient of :func:`log_likelihood` with respect to ``beta``."""
    phi = np.atleast_2d(phi)
    return (phi.T @ (ybar(beta, phi, y, sigma2) - phi @ beta)) / sigma2


def write_trace_csv(path, ks, betas, errs=None):
    """``k,beta_1..beta_d,err_aligned`` (the error column is left out without ground truth)."""
    betas = np.asarray(betas)
    header = ["k"] + [f"beta_{j + 1}" for j in range(betas.shape[-1])]
    if errs is not None:
        header.append("err_aligned")
    rows = []
    for i, k in enumerate(ks):
        row = [int(k), *betas[i]]
        if errs is not None:
            row.append(errs[i])
        rows.append(row)
    write_csv(path, header, rows)
