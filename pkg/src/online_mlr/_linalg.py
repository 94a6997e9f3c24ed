"""Small batched linear-algebra kernels.

Everything here broadcasts over leading axes and reduces with an explicit
multiply-and-sum over the last axis instead of calling BLAS.  For the tiny
dimensions used by the estimators this is just as fast, and the result for
a given row does not depend on how many rows are processed together, which
keeps batched replications bit-identical to solo runs.
"""

import numpy as np


def dot(u, v):
    return (u * v).sum(-1)


def matvec(M, v):
    return (M * v[..., None, :]).sum(-1)


def outer(u, v):
    return u[..., :, None] * v[..., None, :]


def symmetrize(M):
    return 0.5 * (M + np.swapaxes(M, -1, -2))


def rls_gain(P, phi):
    """Return ``(a, P @ phi)`` with ``a = 1 / (1 + phi' P phi)``."""
    Pphi = matvec(P, phi)
    a = 1.0 / (1.0 + dot(phi, Pphi))
    return a, Pphi


def rls_covariance_update(P, a, Pphi):
    # P - a P phi phi' P, using P phi phi' P == (P phi)(P phi)' for symmetric P
    P_new = P - a[..., None, None] * outer(Pphi, Pphi)
    return symmetrize(P_new)


def is_spd(M, rtol=0.0):
    """True where the symmetric matrix ``M`` has min eigenvalue > rtol * max eigenvalue."""
    w = np.linalg.eigvalsh(symmetrize(M))
    return w[..., 0] > rtol * np.abs(w[..., -1])
