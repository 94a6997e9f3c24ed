"""Two-step online identification of a general two-component MLR.

With ``theta1 = (beta1 + beta2) / 2`` and ``theta2 = (beta1 - beta2) / 2`` the
model reads ``y = theta1' phi + z theta2' phi + w``.  For balanced labels
``E[y | phi] = theta1' phi``, so ``theta1`` is tracked by plain recursive
least squares while ``theta2`` is tracked by the symmetric online EM applied
to the residual ``m = y - theta1' phi``.  Both steps share one gain matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._io import write_csv
from ._linalg import dot, is_spd, matvec, rls_covariance_update, rls_gain
from .exceptions import ConfigError
from .sym_em import ybar


@dataclass(frozen=True)
class AsymState:
    theta1: np.ndarray
    theta2: np.ndarray
    P: np.ndarray
    sigma2: float
    k: int = 0

    @classmethod
    def initial(cls, theta1, theta2, sigma2: float, P0=None) -> AsymState:
        theta1 = np.array(theta1, dtype=float)
        theta2 = np.array(theta2, dtype=float)
        theta1, theta2 = np.broadcast_arrays(theta1, theta2)
        d = theta2.shape[-1]
        if not sigma2 > 0:
            raise ConfigError(f"sigma2 must be positive, got {sigma2}")
        if np.any(np.all(theta2 == 0, axis=-1)):
            raise ConfigError("theta2 must be initialised away from 0")
        P0 = np.eye(d) if P0 is None else np.asarray(P0, dtype=float)
        P0 = np.broadcast_to(P0, theta2.shape[:-1] + (d, d)).copy()
        if not np.all(is_spd(P0)):
            raise ConfigError("P0 must be symmetric positive definite")
        return cls(theta1.copy(), theta2.copy(), P0, float(sigma2), 0)

    @classmethod
    def from_betas(cls, beta1, beta2, sigma2: float, P0=None) -> AsymState:
        beta1 = np.asarray(beta1, dtype=float)
        beta2 = np.asarray(beta2, dtype=float)
        return cls.initial(0.5 * (beta1 + beta2), 0.5 * (beta1 - beta2), sigma2, P0)


def _update(theta1, theta2, P, phi, y, sigma2, residual_from="pre"):
    a, Pphi = rls_gain(P, phi)
    m = y - dot(theta1, phi)
    theta1_new = theta1 + (a * m)[..., None] * Pphi
    if residual_from == "post":
        m = y - dot(theta1_new, phi)
    innovation = ybar(theta2, phi, m, sigma2) - dot(theta2, phi)
    theta2_new = theta2 + (a * innovation)[..., None] * Pphi
    return theta1_new, theta2_new, rls_covariance_update(P, a, Pphi)


def step(state: AsymState, phi, y, residual_from: str = "pre") -> AsymState:
    """One step of both recursions.

    The residual ``m`` uses the pre-update ``theta1`` (``residual_from="pre"``).
    ``"post"`` uses the freshly updated ``theta1`` instead and exists only as
    an ablation.
    """
    if residual_from not in ("pre", "post"):
        raise ValueError(f"residual_from must be 'pre' or 'post', got {residual_from!r}")
    phi = np.asarray(phi, dtype=float)
    if phi.shape[-1] != state.theta1.shape[-1]:
        raise ValueError(f"phi has dimension {phi.shape[-1]}, expected {state.theta1.shape[-1]}")
    t1, t2, P = _update(state.theta1, state.theta2, state.P, phi, y, state.sigma2, residual_from)
    return AsymState(t1, t2, P, state.sigma2, state.k + 1)


def outputs(state: AsymState):
    """``(beta1, beta2) = (theta1 + theta2, theta1 - theta2)``."""
    return state.theta1 + state.theta2, state.theta1 - state.theta2


def align_error(beta1, beta2, beta1_star, beta2_star):
    """Match each estimate to its nearest true parameter.

    Returns ``(err1, err2, (j1, j2))`` with ``j`` in ``{1, 2}``; a tie goes to 1.
    Works elementwise over leading batch axes.
    """
    def nearest(beta):
        e1 = np.linalg.norm(beta - beta1_star, axis=-1)
        e2 = np.linalg.norm(beta - beta2_star, axis=-1)
        j = np.where(e2 < e1, 2, 1)
        return np.minimum(e1, e2), j

    err1, j1 = nearest(np.asarray(beta1, dtype=float))
    err2, j2 = nearest(np.asarray(beta2, dtype=float))
    if np.ndim(j1) == 0:
        return float(err1), float(err2), (int(j1), int(j2))
    return err1, err2, (j1, j2)


@dataclass
class AsymRun:
    state: AsymState
    beta1: np.ndarray
    beta2: np.ndarray
    path: np.ndarray | None = None  # pre-update (beta_k1, beta_k2), shape (n, ..., 2, d)


def run(state: AsymState, phi, y, whitener=None, keep_path: bool = False,
        residual_from: str = "pre") -> AsymRun:
    """Time-major block driver; see :func:`online_mlr.sym_em.run` for conventions."""
    phi = np.asarray(phi, dtype=float)
    y = np.asarray(y, dtype=float)
    t1, t2, P, sigma2 = state.theta1, state.theta2, state.P, state.sigma2
    path = np.empty(phi.shape[:1] + t1.shape[:-1] + (2, t1.shape[-1])) if keep_path else None
    root = None
    for k in range(phi.shape[0]):
        x = phi[k]
        if whitener is not None:
            x, root = whitener(x)
        if keep_path:
            b1, b2 = t1 + t2, t1 - t2
            if root is not None:
                b1, b2 = matvec(root, b1), matvec(root, b2)
            path[k, ..., 0, :] = b1
            path[k, ..., 1, :] = b2
        t1, t2, P = _update(t1, t2, P, x, y[k], sigma2, residual_from)
    final = AsymState(t1, t2, P, sigma2, state.k + phi.shape[0])
    b1, b2 = outputs(final)
    if root is not None:
        b1, b2 = matvec(root, b1), matvec(root, b2)
    return AsymRun(final, b1, b2, path)


def write_trace_csv(path, ks, beta1s, beta2s, err1=None, err2=None):
    """``k,beta1_1..beta1_d,beta2_1..beta2_d,err1,err2``."""
    beta1s, beta2s = np.asarray(beta1s), np.asarray(beta2s)
    d = beta1s.shape[-1]
    header = (["k"] + [f"beta1_{j + 1}" for j in range(d)]
              + [f"beta2_{j + 1}" for j in range(d)])
    with_err = err1 is not None
    if with_err:
        header += ["err1", "err2"]
    rows = []
    for i, k in enumerate(ks):
        row = [int(k), *beta1s[i], *beta2s[i]]
        if with_err:
            row += [err1[i], err2[i]]
        rows.append(row)
    write_csv(path, header, rows)
