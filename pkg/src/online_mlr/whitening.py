"""Online covariance tracking and symmetric whitening of regressors.

The running second moment ``Rbar_k = Rbar_{k-1} + (phi_k phi_k' - Rbar_{k-1}) / k``
converges to the stationary covariance, and ``Rbar_k^{-1/2} phi_k`` then has
(asymptotically) identity covariance, i.e. a rotation-invariant Gaussian law
when the regressors are Gaussian.  All functions broadcast over leading
batch axes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._linalg import matvec, outer, symmetrize

MIN_EIGENVALUE = 1e-10


@dataclass(frozen=True)
class WhitenState:
    k: int
    Rbar: np.ndarray

    @classmethod
    def initial(cls, d: int, batch: tuple[int, ...] = ()) -> WhitenState:
        return cls(0, np.broadcast_to(np.eye(d), batch + (d, d)).copy())


def update_covariance(state: WhitenState, phi) -> WhitenState:
    phi = np.asarray(phi, dtype=float)
    if phi.shape[-1] != state.Rbar.shape[-1]:
        raise ValueError(f"phi has dimension {phi.shape[-1]}, expected {state.Rbar.shape[-1]}")
    k = state.k + 1
    Rbar = state.Rbar + (outer(phi, phi) - state.Rbar) / k
    return WhitenState(k, symmetrize(Rbar))


def inverse_sqrt(Rbar, min_eigenvalue: float = MIN_EIGENVALUE):
    """Symmetric inverse square root and a readiness mask.

    Where the smallest eigenvalue is below ``min_eigenvalue`` the returned
    matrix is the identity and the mask is False.
    """
    w, V = np.linalg.eigh(Rbar)
    ready = w[..., 0] >= min_eigenvalue
    scale = 1.0 / np.sqrt(np.where(ready[..., None], w, 1.0))
    root = ((V * scale[..., None, :])[..., :, None, :] * V[..., None, :, :]).sum(-1)
    root = np.where(ready[..., None, None], symmetrize(root), np.eye(Rbar.shape[-1]))
    return root, ready


def whiten(state: WhitenState, phi):
    """``Rbar^{-1/2} phi``, or None while ``Rbar`` is not safely positive definite.

    For batched states the result is returned only if every member is ready.
    """
    root, ready = inverse_sqrt(state.Rbar)
    if not np.all(ready):
        return None
    return matvec(root, np.asarray(phi, dtype=float))


class Whitener:
    """Stateful whitening stage placed in front of an estimator.

    Each call folds ``phi`` into the covariance estimate and returns the
    whitened regressor together with the inverse root that produced it.
    Until ``k >= warmup`` (default ``2 d``) and while the estimate is not
    positive definite, regressors pass through unchanged and the returned
    root is the identity.
    """

    def __init__(self, d: int, batch: tuple[int, ...] = (), warmup: int | None = None):
        self.state = WhitenState.initial(d, batch)
        self.warmup = 2 * d if warmup is None else warmup
        self.root = np.broadcast_to(np.eye(d), batch + (d, d)).copy()

    def __call__(self, phi):
        self.state = update_covariance(self.state, phi)
        if self.state.k < self.warmup:
            return np.asarray(phi, dtype=float), self.root
        root, ready = inverse_sqrt(self.state.Rbar)
        self.root = root
        return np.where(ready[..., None], matvec(root, phi), phi), root
