"""Dense symmetric linear-algebra primitives.

Everything here works on plain ``numpy`` arrays. The routines are pure: inputs
are never modified in place.
"""
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ConvergenceError, NotPSDError, SingularityError, ValidationError

DEFAULT_TRUNC_TOL = 1e-12
DEFAULT_PIVOT_RTOL = 1e-12
SYM_TOL = 1e-12
_TILE = 256


def as_symmetric(A, sym_tol=SYM_TOL, name="matrix"):
    """Validate that ``A`` is square and symmetric, return an exactly symmetric copy.

    Asymmetry up to ``sym_tol * max|A|`` is tolerated and averaged away, so
    products such as ``G @ G.T`` are accepted.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValidationError(f"{name} must be square, got shape {A.shape}")
    scale = float(np.max(np.abs(A))) if A.size else 0.0
    if not np.isfinite(scale):
        raise ValidationError(f"{name} has non-finite entries")
    # tiled, since a full-size transpose is cache-hostile for large N
    n = A.shape[0]
    out = np.empty_like(A)
    asym = 0.0
    for i in range(0, n, _TILE):
        for j in range(i, n, _TILE):
            X = A[i:i + _TILE, j:j + _TILE]
            Y = A[j:j + _TILE, i:i + _TILE].T
            asym = max(asym, float(np.max(np.abs(X - Y))))
            S = 0.5 * (X + Y)
            out[i:i + _TILE, j:j + _TILE] = S
            out[j:j + _TILE, i:i + _TILE] = S.T
    if asym > sym_tol * max(scale, np.finfo(float).tiny):
        raise ValidationError(f"{name} is not symmetric (max |A - A^T| = {asym:.3e})")
    return out


def fix_signs(V):
    """Flip columns of ``V`` so each column's largest-magnitude entry is positive."""
    V = np.array(V, dtype=float, copy=True)
    if V.size == 0:
        return V
    idx = np.argmax(np.abs(V), axis=0)
    s = np.sign(V[idx, np.arange(V.shape[1])])
    s[s == 0] = 1.0
    return V * s


@dataclass
class EigenResult:
    """Truncated eigendecomposition ``A ~ vectors @ diag(values) @ vectors.T``.

    ``values`` are sorted in descending order and hold only the retained
    eigenvalues; ``tail`` is the first discarded eigenvalue (0 when nothing
    was discarded) and bounds the spectral truncation error.
    """

    values: np.ndarray
    vectors: np.ndarray
    rank: int
    tail: float = 0.0
    all_values: np.ndarray = None

    def reconstruct(self):
        return (self.vectors * self.values) @ self.vectors.T


def jacobi_eigh(A, tol=1e-14, max_sweeps=100):
    """Cyclic Jacobi eigenvalue iteration for a dense symmetric matrix.

    Stops once the off-diagonal Frobenius mass is at most ``tol * ||A||_F``.
    Returns ``(values, vectors)`` in ascending order like ``numpy.linalg.eigh``.
    Meant for small matrices; cost is O(n^3) per sweep with a Python loop over
    index pairs.
    """
    a = np.array(A, dtype=float, copy=True)
    n = a.shape[0]
    v = np.eye(n)
    target = tol * np.linalg.norm(a)
    offmask = ~np.eye(n, dtype=bool)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(a[offmask] ** 2))
        if off <= target:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if theta == 0.0:
                    t = 1.0
                elif abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                ap = a[:, p].copy()
                aq = a[:, q]
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap = a[p, :].copy()
                aq = a[q, :]
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                vp = v[:, p].copy()
                v[:, p] = c * vp - s * v[:, q]
                v[:, q] = s * vp + c * v[:, q]
    else:
        off = np.sqrt(np.sum(a[offmask] ** 2))
        if off > target:
            raise ConvergenceError(
                f"Jacobi iteration did not converge in {max_sweeps} sweeps", residual=off
            )
    w = np.diag(a).copy()
    order = np.argsort(w, kind="stable")
    return w[order], v[:, order]


def sym_eig(A, trunc_tol=DEFAULT_TRUNC_TOL, method="lapack", max_rank=None, check=True):
    """Eigendecomposition of a symmetric matrix with relative truncation.

    Parameters
    ----------
    A : (n, n) array_like
        Symmetric matrix.
    trunc_tol : float
        Eigenvalues ``<= trunc_tol * lambda_max`` are discarded.
    method : {"lapack", "jacobi"}
        ``"lapack"`` calls ``scipy.linalg.eigh``; ``"jacobi"`` uses
        :func:`jacobi_eigh`.
    max_rank : int, optional
        Keep at most this many eigenpairs.

    Returns
    -------
    EigenResult
    """
    if not 0.0 <= trunc_tol < 1.0:
        raise ValidationError(f"trunc_tol must lie in [0, 1), got {trunc_tol}")
    if check:
        A = as_symmetric(A)
    else:
        A = np.asarray(A, dtype=float)
    n = A.shape[0]
    if n == 0:
        return EigenResult(np.zeros(0), np.zeros((0, 0)), 0, 0.0, np.zeros(0))
    if method == "lapack":
        try:
            w, V = scipy.linalg.eigh(A, check_finite=False)
        except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
            raise ConvergenceError(f"eigh failed: {exc}") from exc
    elif method == "jacobi":
        w, V = jacobi_eigh(A)
    else:
        raise ValidationError(f"unknown eigen method {method!r}")
    w = w[::-1]
    V = V[:, ::-1]
    top = w[0]
    rank = int(np.sum(w > trunc_tol * top)) if top > 0 else 0
    if max_rank is not None:
        rank = min(rank, int(max_rank))
    tail = float(max(w[rank], 0.0)) if rank < n else 0.0
    return EigenResult(w[:rank].copy(), fix_signs(V[:, :rank]), rank, tail, w.copy())


def truncated_factor(A, trunc_tol=DEFAULT_TRUNC_TOL, psd_tol=None, method="lapack", max_rank=None):
    """Factor ``A ~ H @ H.T`` with ``H = V diag(sqrt(values))`` over retained eigenpairs.

    Raises :class:`NotPSDError` if an eigenvalue lies below
    ``-psd_tol * lambda_max`` (``psd_tol`` defaults to ``trunc_tol``; pass
    ``psd_tol=np.inf`` to skip the check).

    Returns ``(H, eig)``.
    """
    eig = sym_eig(A, trunc_tol=trunc_tol, method=method, max_rank=max_rank)
    if psd_tol is None:
        psd_tol = trunc_tol
    if eig.all_values.size and np.isfinite(psd_tol):
        top = max(eig.all_values[0], 0.0)
        low = eig.all_values[-1]
        if low < -psd_tol * top or (top == 0.0 and low < 0.0):
            raise NotPSDError(f"matrix has eigenvalue {low:.3e} (lambda_max {top:.3e})")
    H = eig.vectors * np.sqrt(eig.values)
    return H, eig


@dataclass
class PivotedCholesky:
    """Full-pivoted Cholesky factor ``A[perm][:, perm] ~ factor @ factor.T``.

    ``factor`` is lower trapezoidal (n x rank) in pivot order;
    :attr:`lower` returns the same factor with rows in the original order,
    so that ``A ~ lower @ lower.T``.
    """

    permutation: np.ndarray
    factor: np.ndarray
    rank: int

    @property
    def lower(self):
        out = np.empty_like(self.factor)
        out[self.permutation] = self.factor
        return out

    @property
    def pivots(self):
        return self.permutation[: self.rank]

    def reconstruct(self):
        L = self.lower
        return L @ L.T


def pivoted_cholesky(A, pivot_tol=None, check=True):
    """Cholesky decomposition with full (diagonal-maximising) pivoting.

    Stops once the largest remaining diagonal entry of the Schur complement is
    ``<= pivot_tol``; the default is ``1e-12 * max(diag(A))``. Among equal
    maximal diagonals the smallest index is taken.
    """
    if check:
        A = as_symmetric(A)
    else:
        A = np.asarray(A, dtype=float)
    n = A.shape[0]
    d = np.diag(A).copy()
    if pivot_tol is None:
        pivot_tol = DEFAULT_PIVOT_RTOL * (max(d.max(), 0.0) if n else 0.0)
    pivot_tol = float(pivot_tol)
    L = np.zeros((n, n))
    remaining = np.ones(n, dtype=bool)
    pivots = []
    for k in range(n):
        rem = np.flatnonzero(remaining)
        dr = d[rem]
        j = rem[int(np.argmax(dr))]
        if d[j] <= pivot_tol:
            break
        col = A[:, j] - L[:, :k] @ L[j, :k]
        col /= np.sqrt(d[j])
        col[~remaining] = 0.0
        col[j] = np.sqrt(d[j])
        L[:, k] = col
        d -= col * col
        d[j] = 0.0
        remaining[j] = False
        pivots.append(j)
    r = len(pivots)
    rem = np.flatnonzero(remaining)
    if rem.size and d[rem].min() < -max(pivot_tol, 0.0) - 1e-14 * abs(np.diag(A)).max(initial=0.0):
        raise NotPSDError(f"negative pivot {d[rem].min():.3e} below -pivot_tol {pivot_tol:.3e}")
    perm = np.concatenate([np.asarray(pivots, dtype=int), rem]).astype(int)
    factor = L[perm, :r]
    return PivotedCholesky(perm, factor, r)


def pseudo_inverse_factor(H, rank_tol=1e-12, patch=None):
    """Left pseudo-inverse ``(H^T H)^{-1} H^T`` of a full-column-rank matrix.

    Computed from the thin SVD. Raises :class:`SingularityError` when the
    smallest singular value is ``<= rank_tol * largest``.
    """
    H = np.asarray(H, dtype=float)
    if H.ndim != 2:
        raise ValidationError("factor must be a 2-D array")
    n, k = H.shape
    if k == 0:
        return np.zeros((0, n))
    if k > n:
        raise SingularityError(f"factor has more columns ({k}) than rows ({n})"
                               + (f" on patch {patch}" if patch is not None else ""), patch)
    U, s, Vt = np.linalg.svd(H, full_matrices=False)
    if s[-1] <= rank_tol * s[0]:
        where = f" on patch {patch}" if patch is not None else ""
        raise SingularityError(f"rank-deficient factor{where}: sigma_min/sigma_max = {s[-1] / s[0]:.3e}",
                               patch)
    return (Vt.T / s) @ U.T


def spectral_norm(A):
    """Largest absolute eigenvalue of a symmetric matrix (dense, exact)."""
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return 0.0
    w = scipy.linalg.eigvalsh(A, check_finite=False)
    return float(max(abs(w[0]), abs(w[-1])))
