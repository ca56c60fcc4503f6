"""Jacobi-type joint diagonalization of a family of symmetric matrices.

Given symmetric ``M_1, ..., M_K`` we look for an orthogonal ``V`` minimising
the off-diagonal energy ``sum_k sum_{i != j} (V^T M_k V)_{ij}^2``. Plane
rotations are swept over index pairs in lexicographic order; each rotation
angle is the exact minimiser of the objective restricted to that plane.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

DEFAULT_EPS = 1e-12
DEFAULT_MAX_SWEEPS = 50
SKIP_RTOL = 1e-30


@dataclass
class JointDiagProblem:
    """A family of ``K`` symmetric ``n x n`` matrices stored as a (K, n, n) array."""

    matrices: np.ndarray

    def __post_init__(self):
        M = np.asarray(self.matrices, dtype=float)
        if M.ndim == 2:
            M = M[None]
        if M.ndim != 3 or M.shape[1] != M.shape[2]:
            raise ValidationError(f"expected a stack of square matrices, got shape {M.shape}")
        if not np.array_equal(M, M.transpose(0, 2, 1)):
            raise ValidationError("joint diagonalization input must be exactly symmetric")
        self.matrices = M

    @property
    def dim(self):
        return self.matrices.shape[1]

    @property
    def K(self):
        return self.matrices.shape[0]

    def frobenius2(self):
        return float(np.sum(self.matrices ** 2))


@dataclass
class JointDiagResult:
    """Output of :func:`joint_diagonalize`.

    ``trace`` holds the objective after every applied rotation when tracing
    was requested (the first entry is the initial value).
    """

    rotation: np.ndarray
    off_diag_energy: float
    sweeps: int
    converged: bool
    rotations: int = 0
    trace: list = field(default_factory=list)


def _as_problem(problem):
    return problem if isinstance(problem, JointDiagProblem) else JointDiagProblem(problem)


def _offdiag(M):
    # Summed directly: subtracting the diagonal energy from the total would
    # cancel everything below ~1e-16 of the total.
    n = M.shape[1]
    off = ~np.eye(n, dtype=bool)
    return float(np.sum(M[:, off] ** 2))


def off_diag_energy(problem, V=None):
    """Sum of squared off-diagonal entries of ``V^T M_k V`` over the family."""
    M = _as_problem(problem).matrices
    if V is not None:
        V = np.asarray(V, dtype=float)
        if V.shape != M.shape[1:]:
            raise ValidationError("rotation and matrices have different sizes")
        M = np.einsum("ji,kjl,lm->kim", V, M, V, optimize=True)
    return max(_offdiag(M), 0.0)


def _smallest_eigvec_2x2(g11, g12, g22):
    # Largest eigenvector of [[g11, g12], [g12, g22]] is (cos phi, sin phi).
    if g11 == 0.0 and g22 == 0.0 and g12 == 0.0:
        return 1.0, 0.0
    if g12 == 0.0:
        return (1.0, 0.0) if g11 <= g22 else (0.0, 1.0)
    phi = 0.5 * np.arctan2(2.0 * g12, g11 - g22)
    w1, w2 = -np.sin(phi), np.cos(phi)
    if w1 < 0.0 or (w1 == 0.0 and w2 < 0.0):
        w1, w2 = -w1, -w2
    return w1, w2


def _pair_cs(a, b):
    g11 = float(a @ a)
    g12 = float(a @ b)
    g22 = float(b @ b)
    w1, w2 = _smallest_eigvec_2x2(g11, g12, g22)
    c = np.sqrt((1.0 + w1) / 2.0)
    if c == 0.0:  # w = (-1, 0); unreachable after the sign fix but kept as a guard
        return 0.0, 1.0, g11, g12, g22
    s = w2 / (2.0 * c)
    return c, s, g11, g12, g22


def pair_rotation(problem, p, q):
    """Optimal plane rotation ``(c, s)`` for the index pair ``p < q``.

    The rotation acts as ``v_p <- c e_p + s e_q``, ``v_q <- -s e_p + c e_q``.
    It comes from the right singular vector ``w`` (sign-fixed to ``w[0] >= 0``)
    of the K x 2 matrix with columns ``M_k[p, q]`` and
    ``(M_k[q, q] - M_k[p, p]) / 2`` belonging to the smallest singular value.
    """
    M = _as_problem(problem).matrices
    if not 0 <= p < q < M.shape[1]:
        raise ValidationError(f"need 0 <= p < q < n, got p={p}, q={q}")
    a = M[:, p, q]
    b = 0.5 * (M[:, q, q] - M[:, p, p])
    c, s = _pair_cs(a, b)[:2]
    return c, s


def rotation_matrix(n, p, q, c, s):
    """The ``n x n`` plane rotation used by :func:`pair_rotation`."""
    R = np.eye(n)
    R[p, p] = c
    R[p, q] = -s
    R[q, p] = s
    R[q, q] = c
    return R


def _apply(M, V, p, q, c, s):
    # M <- R^T M R on every matrix; V <- V R.
    Mp = M[:, :, p].copy()
    Mq = M[:, :, q]
    M[:, :, p] = c * Mp + s * Mq
    M[:, :, q] = -s * Mp + c * Mq
    Mp = M[:, p, :].copy()
    Mq = M[:, q, :]
    M[:, p, :] = c * Mp + s * Mq
    M[:, q, :] = -s * Mp + c * Mq
    Vp = V[:, p].copy()
    V[:, p] = c * Vp + s * V[:, q]
    V[:, q] = -s * Vp + c * V[:, q]


def joint_diagonalize(problem, eps=DEFAULT_EPS, max_sweeps=DEFAULT_MAX_SWEEPS, trace=False,
                      skip_rtol=SKIP_RTOL):
    """Approximately diagonalize a family of symmetric matrices by one rotation.

    Parameters
    ----------
    problem : JointDiagProblem or array_like of shape (K, n, n)
    eps : float
        Relative tolerance; iteration stops once the off-diagonal energy is at
        most ``eps * sum_k ||M_k||_F^2``.
    max_sweeps : int
        Maximum number of sweeps over all pairs.
    trace : bool
        Record the objective after each applied rotation.
    skip_rtol : float
        A pair rotation is skipped when it would lower the objective by at
        most ``skip_rtol * sum_k ||M_k||_F^2``. The gain is quadratic in the
        coupling, so ``1e-30`` only skips couplings near rounding level.

    Returns
    -------
    JointDiagResult
        ``converged`` is False when ``max_sweeps`` was exhausted, or when a
        full sweep found no rotation worth applying while the tolerance was
        still unmet.
    """
    if eps <= 0:
        raise ValidationError("eps must be positive")
    prob = _as_problem(problem)
    M = prob.matrices.copy()
    n = prob.dim
    V = np.eye(n)
    total = prob.frobenius2()
    target = eps * total
    skip = skip_rtol * total
    obj = _offdiag(M)
    hist = [obj] if trace else []
    sweeps = 0
    nrot = 0
    converged = obj <= target
    while not converged and sweeps < max_sweeps:
        sweeps += 1
        applied = 0
        for p in range(n - 1):
            for q in range(p + 1, n):
                a = M[:, p, q]
                b = 0.5 * (M[:, q, q] - M[:, p, p])
                c, s, g11, g12, g22 = _pair_cs(a, b)
                lam_min = 0.5 * (g11 + g22) - np.hypot(0.5 * (g11 - g22), g12)
                gain = 2.0 * (g11 - max(lam_min, 0.0))
                if gain <= skip:
                    continue
                _apply(M, V, p, q, c, s)
                applied += 1
                if trace:
                    hist.append(_offdiag(M))
        nrot += applied
        obj = _offdiag(M)
        converged = obj <= target
        if applied == 0:
            break
    return JointDiagResult(V, off_diag_energy(prob, V), sweeps, bool(converged), nrot, hist)
