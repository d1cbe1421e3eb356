"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``."""

import numpy as np


def covariance_update(P, K, PH, q):
    """P <- sym(P - K PH^T) + q I, in place."""
    n = P.shape[0]
    if K.shape[0] != n or PH.shape != K.shape or P.shape[1] != n:
        raise ValueError("covariance_update: inconsistent shapes")
    P -= K @ PH.T
    P[...] = 0.5 * (P + P.T)
    P[np.diag_indices(n)] += q


def spring_substep(pos, vel, springs, rest, stiffness, damping, ext, free,
                   inv_mass, dt, force):
    """One semi-implicit Euler step of a 2D spring network (implicit node damping)."""
    a = springs[:, 0]
    b = springs[:, 1]
    d = pos[b] - pos[a]
    length = np.sqrt(np.einsum("ij,ij->i", d, d))
    ok = length > 0.0
    u = np.zeros_like(d)
    u[ok] = d[ok] / length[ok, None]
    f = np.where(ok, stiffness * (length - rest), 0.0)
    fu = f[:, None] * u
    n = pos.shape[0]
    force[:, 0] = ext[:, 0] + np.bincount(a, fu[:, 0], n) - np.bincount(b, fu[:, 0], n)
    force[:, 1] = ext[:, 1] + np.bincount(a, fu[:, 1], n) - np.bincount(b, fu[:, 1], n)
    mask = free.astype(bool)
    vel[mask] = (vel[mask] + dt * force[mask] * inv_mass) / (1.0 + dt * damping * inv_mass)
    pos[mask] += dt * vel[mask]
