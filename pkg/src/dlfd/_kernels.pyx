# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops.

Both routines mutate their array arguments in place and must agree with
``dlfd._fallback`` to floating-point reassociation error.
"""
from libc.math cimport sqrt
from scipy.linalg.cython_blas cimport dsyr2k


DEF TILE = 32


def covariance_update(double[:, ::1] P, double[:, ::1] K,
                      double[:, ::1] PH, double q):
    """P <- sym(P - K PH^T) + q I, in place, for symmetric P.

    Only the upper triangle of P is read. Because P is symmetric,
    sym(P - K PH^T) = P - (K PH^T + PH K^T) / 2, which is a BLAS rank-2m
    update of one triangle. The result is then mirrored tile by tile.
    """
    cdef int n = <int>P.shape[0]
    cdef int m = <int>K.shape[1]
    cdef int i0, j0, i1, j1, i, j
    cdef double alpha = -0.5, beta = 1.0
    cdef char uplo = b'L'
    cdef char trans = b'T'
    cdef double* p
    if K.shape[0] != n or PH.shape[0] != n or PH.shape[1] != m or P.shape[1] != n:
        raise ValueError("covariance_update: inconsistent shapes")
    if n == 0:
        return
    with nogil:
        if m > 0:
            # column-major view: P is its own transpose, K and PH are (m x n)
            dsyr2k(&uplo, &trans, &n, &m, &alpha, &K[0, 0], &m, &PH[0, 0], &m,
                   &beta, &P[0, 0], &n)
        p = &P[0, 0]
        i0 = 0
        while i0 < n:
            i1 = min(i0 + TILE, n)
            j0 = i0
            while j0 < n:
                j1 = min(j0 + TILE, n)
                for i in range(i0, i1):
                    for j in range(max(j0, i + 1), j1):
                        p[j * n + i] = p[i * n + j]
                j0 = j1
            i0 = i1
        for i in range(n):
            p[i * n + i] += q


def spring_substep(double[:, ::1] pos, double[:, ::1] vel,
                   const int[:, ::1] springs, const double[::1] rest,
                   double stiffness, double damping,
                   const double[:, ::1] ext, const unsigned char[::1] free,
                   double inv_mass, double dt, double[:, ::1] force):
    """One semi-implicit Euler step of a 2D spring network.

    Node velocities carry viscous damping ``damping`` (N s/m) treated
    implicitly, so the damping term never destabilises the step.
    """
    cdef Py_ssize_t n = pos.shape[0]
    cdef Py_ssize_t ns = springs.shape[0]
    cdef Py_ssize_t s, a, b, i
    cdef double dx, dy, length, ux, uy, f
    cdef double shrink = 1.0 / (1.0 + dt * damping * inv_mass)
    with nogil:
        for i in range(n):
            force[i, 0] = ext[i, 0]
            force[i, 1] = ext[i, 1]
        for s in range(ns):
            a = springs[s, 0]
            b = springs[s, 1]
            dx = pos[b, 0] - pos[a, 0]
            dy = pos[b, 1] - pos[a, 1]
            length = sqrt(dx * dx + dy * dy)
            if length == 0.0:
                continue
            ux = dx / length
            uy = dy / length
            f = stiffness * (length - rest[s])
            force[a, 0] += f * ux
            force[a, 1] += f * uy
            force[b, 0] -= f * ux
            force[b, 1] -= f * uy
        for i in range(n):
            if free[i]:
                vel[i, 0] = (vel[i, 0] + dt * force[i, 0] * inv_mass) * shrink
                vel[i, 1] = (vel[i, 1] + dt * force[i, 1] * inv_mass) * shrink
                pos[i, 0] += dt * vel[i, 0]
                pos[i, 1] += dt * vel[i, 1]
