"""Intrinsic sparse mode decomposition.

The decomposition runs in three stages:

1. local eigendecomposition ``A_mm = H_m H_m^T`` on every patch;
2. a rotation ``D_m`` per patch that jointly diagonalizes the family
   ``Lambda_mn Lambda_mn^T`` (``n != m``), where ``Lambda`` is ``A`` written
   in the block-diagonal basis ``H_ext``;
3. a patch-up that glues the rotated local pieces ``G_m = H_m D_m`` into
   global modes by a pivoted Cholesky (or eigen) factorization of
   ``Omega = D^T Lambda D``.

:func:`ismd` is the exact algorithm, :func:`ismd_threshold` adds a learned
threshold on ``Omega`` for noisy input, and :func:`ismd_lowrank` replaces the
patch-up by a truncated eigendecomposition of the normalized ``Omega``.
"""
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import (GapNotFoundError, InfeasibleTargetError, SingularityError,
                     ValidationError)
from .jointdiag import joint_diagonalize
from .linalg import as_symmetric, fix_signs, pivoted_cholesky, truncated_factor
from .partition import ModeSet, Partition

log = logging.getLogger(__name__)

NOISY_TRUNC_TOL = 1e-4
LOWRANK_ENERGY_WEIGHT = 1e-6


@dataclass
class ISMDOptions:
    """Tuning knobs shared by all variants.

    Attributes
    ----------
    trunc_tol : float
        Relative eigenvalue cut-off for the local eigendecompositions.
    jd_eps, jd_max_sweeps :
        Joint-diagonalization tolerance and sweep limit. The default is far
        below the joint-diagonalization module's own default: sweeping stops
        anyway once no pair rotation reduces the objective measurably, and
        stopping early leaves rotation errors of order ``sqrt(jd_eps)`` that
        show up as spurious support.
    pivot_tol : float, optional
        Absolute stopping tolerance of the pivoted Cholesky patch-up. By
        default ``1e-12 * max(diag(Omega))``, or ``threshold * max(diag)``
        once a threshold is in use.
    normalize : bool
        Rescale the local pieces to unit norm before the patch-up.
    threshold : float or "auto", optional
        Zero all entries of ``Omega`` below this magnitude; ``"auto"`` learns
        the value from the entry distribution.
    snap : bool
        After thresholding, replace surviving entries by their sign, provided
        the surviving pattern says all modes are identifiable.
    gap_factor : float
        Minimum ratio between the two clusters when learning a threshold.
    rank : int, optional
        Rank cap for :func:`ismd_lowrank`.
    error_target : float, optional
        Relative spectral error target for :func:`ismd_lowrank`.
    local_tol : float, optional
        Local truncation for :func:`ismd_lowrank`, relative to ``||A||_2``;
        adapted automatically when not given.
    energy_weight : float, optional
        Weight of the local energy ``diag(gamma_m / gamma_m[0])`` added to
        each joint-diagonalization family. It only breaks ties inside the
        null space of rank-deficient couplings, keeping pieces close to
        local eigenvectors. None means 0 for :func:`ismd` and
        :func:`ismd_threshold` and ``LOWRANK_ENERGY_WEIGHT`` for
        :func:`ismd_lowrank`.
    workers : int
        Thread count for per-patch work. Results do not depend on it.
    """

    trunc_tol: float = 1e-12
    jd_eps: float = 1e-24
    jd_max_sweeps: int = 50
    pivot_tol: float = None
    normalize: bool = False
    threshold: object = None
    snap: bool = False
    gap_factor: float = 10.0
    rank: int = None
    error_target: float = None
    local_tol: float = None
    energy_weight: float = None
    workers: int = 1
    eig_method: str = "lapack"
    compute_residual: bool = True

    def __post_init__(self):
        if not 0.0 <= self.trunc_tol < 1.0:
            raise ValidationError(f"trunc_tol must lie in [0, 1), got {self.trunc_tol}")
        if self.jd_eps <= 0:
            raise ValidationError("jd_eps must be positive")
        if isinstance(self.threshold, str):
            if self.threshold != "auto":
                raise ValidationError(f"threshold must be a number or 'auto', got {self.threshold!r}")
        elif self.threshold is not None and self.threshold < 0:
            raise ValidationError("threshold must be non-negative")
        if self.rank is not None and int(self.rank) < 0:
            raise ValidationError("rank must be non-negative")
        if self.error_target is not None and not 0.0 < self.error_target < 1.0:
            raise ValidationError("error_target must lie in (0, 1)")
        if self.energy_weight is not None and self.energy_weight < 0:
            raise ValidationError("energy_weight must be non-negative")
        if int(self.workers) < 1:
            raise ValidationError("workers must be at least 1")

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValidationError(f"unknown option(s): {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        return asdict(self)

    def replace(self, **kw):
        d = self.to_dict()
        d.update(kw)
        return type(self).from_dict(d)


@dataclass
class LocalBasisSet:
    """Per-patch factors ``H_m`` (``|P_m| x K_m``) and their eigen data.

    ``eigvals[m]`` and ``eigvecs[m]`` give ``H_m = eigvecs[m] * sqrt(eigvals[m])``.
    ``rotations[m]`` is ``D_m`` once the joint diagonalization has run.
    """

    factors: list
    eigvals: list
    eigvecs: list
    tails: list
    rotations: list = None
    jd_info: list = None

    @property
    def ranks(self):
        return np.array([f.shape[1] for f in self.factors], dtype=int)

    @property
    def total_rank(self):
        return int(self.ranks.sum())

    @property
    def offsets(self):
        return np.concatenate([[0], np.cumsum(self.ranks)]).astype(int)

    def pinv(self, m):
        # H_m^+ = diag(1/sqrt(gamma)) V^T because V has orthonormal columns.
        return self.eigvecs[m].T / np.sqrt(self.eigvals[m])[:, None]

    def pieces(self, m):
        """Rotated local pieces ``G_m = H_m D_m``."""
        if self.rotations is None:
            return self.factors[m]
        return self.factors[m] @ self.rotations[m]

    def piece_norms(self, m):
        if self.rotations is None:
            return np.sqrt(self.eigvals[m])
        D = self.rotations[m]
        return np.sqrt(np.einsum("ij,i,ij->j", D, self.eigvals[m], D))

    def extended(self, P, which="pieces"):
        """Block-diagonal ``N x K_(t)`` matrix (``H_ext`` or ``G_ext``) as CSR."""
        get = self.pieces if which == "pieces" else (lambda m: self.factors[m])
        return _block_rows(P, [get(m) for m in range(P.M)], self.offsets)


@dataclass
class CorrelationMatrix:
    """Square matrix over the concatenated local coordinates.

    ``offsets[m]:offsets[m+1]`` indexes the block that belongs to patch ``m``.
    ``role`` is one of ``"lambda"``, ``"omega"`` or ``"omega_normalized"``.
    """

    matrix: np.ndarray
    offsets: np.ndarray
    role: str = "lambda"

    @property
    def M(self):
        return len(self.offsets) - 1

    def block(self, m, n):
        o = self.offsets
        return self.matrix[o[m]:o[m + 1], o[n]:o[n + 1]]

    def patch_of(self):
        """Patch index of every row."""
        return np.repeat(np.arange(self.M), np.diff(self.offsets))


@dataclass
class DecompositionResult:
    """Modes ``G`` with ``A ~ G G^T`` together with diagnostics.

    ``provenance`` records the algorithm, options, threshold and per-stage
    wall-clock times. ``bases``, ``lam`` and ``omega`` keep the intermediate
    objects for further analysis.
    """

    modes: ModeSet
    partition: Partition
    residual: float = None
    provenance: dict = field(default_factory=dict)
    bases: LocalBasisSet = None
    lam: CorrelationMatrix = None
    omega: CorrelationMatrix = None

    @property
    def G(self):
        return self.modes.G

    @property
    def rank(self):
        return self.modes.K

    @property
    def sparseness(self):
        return self.modes.sparseness(self.partition)

    @property
    def local_dimensions(self):
        return self.modes.local_dimensions(self.partition)

    def summary(self):
        """JSON-ready metadata (no arrays except small integer lists)."""
        out = {
            "rank": int(self.rank),
            "residual": None if self.residual is None else float(self.residual),
            "sparseness": [int(s) for s in self.sparseness],
            "local_dimensions": [int(d) for d in self.local_dimensions],
            "local_ranks": None if self.bases is None else [int(k) for k in self.bases.ranks],
            "n": int(self.modes.n),
            "M": int(self.partition.M),
        }
        out.update(self.provenance)
        return out


def _block_rows(P, blocks, offsets):
    rows, cols, vals = [], [], []
    for m, idx in enumerate(P.patches):
        B = blocks[m]
        k = B.shape[1]
        if k == 0:
            continue
        rows.append(np.repeat(idx, k))
        cols.append(np.tile(np.arange(offsets[m], offsets[m] + k), idx.size))
        vals.append(np.asarray(B).ravel())
    if not rows:
        return sp.csr_matrix((P.n, int(offsets[-1])))
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(P.n, int(offsets[-1])))


def _map(fn, items, workers):
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def _opts(opts, kw):
    opts = opts or ISMDOptions()
    return opts.replace(**kw) if kw else opts


def _check_inputs(A, P):
    if not isinstance(P, Partition):
        raise ValidationError("P must be a Partition")
    A = as_symmetric(A)
    if A.shape[0] != P.n:
        raise ValidationError(f"matrix size {A.shape[0]} does not match partition size {P.n}")
    return A


def local_bases(A, P, trunc_tol=1e-12, abs_tol=None, workers=1, method="lapack", psd_tol=None,
                global_floor=False):
    """Truncated eigendecomposition of every diagonal block ``A_mm``.

    Eigenvalues ``<= trunc_tol * lambda_max(A_mm)`` are dropped. With
    ``abs_tol`` given, eigenvalues ``<= abs_tol`` are dropped as well; with
    ``global_floor`` so are those ``<= trunc_tol * max_m lambda_max(A_mm)``,
    which keeps pure-noise patches from contributing pieces.
    Patches whose block is identically zero get rank 0.
    """
    def one(m):
        idx = P.patches[m]
        B = A[np.ix_(idx, idx)]
        return truncated_factor(B, trunc_tol=trunc_tol, psd_tol=psd_tol, method=method)

    out = _map(one, range(P.M), workers)
    floor = abs_tol
    if global_floor:
        top = max((float(e.all_values[0]) for _, e in out if e.all_values.size), default=0.0)
        floor = max(floor or 0.0, trunc_tol * top)
    if floor is not None:
        cut = []
        for H, eig in out:
            if eig.rank:
                k = int(np.sum(eig.values > floor))
                if k < eig.rank:
                    eig.tail = float(eig.values[k])
                    eig.values, eig.vectors, eig.rank = eig.values[:k], eig.vectors[:, :k], k
                    H = H[:, :k]
            cut.append((H, eig))
        out = cut
    return LocalBasisSet([h for h, _ in out], [e.values for _, e in out],
                         [e.vectors for _, e in out], [e.tail for _, e in out])


def assemble_lambda(A, P, bases):
    """Correlation matrix ``Lambda`` with ``A = H_ext Lambda H_ext^T``.

    Block ``(m, n)`` is ``H_m^+ A_mn (H_n^+)^T``.
    """
    A = np.asarray(A, dtype=float)
    offs = bases.offsets
    for m, vals in enumerate(bases.eigvals):
        if vals.size and vals[-1] <= 0:
            raise SingularityError(f"local factor of patch {m} is rank deficient", patch=m)
    W = _block_rows(P, [bases.pinv(m).T for m in range(P.M)], offs)
    WA = (W.T @ A)
    lam = (W.T @ WA.T).T
    lam = 0.5 * (lam + lam.T)
    return CorrelationMatrix(np.ascontiguousarray(lam), offs, "lambda")


def _row_block_patches(lam, m):
    """Patches ``n != m`` whose block ``Lambda_mn`` has a nonzero entry."""
    o = lam.offsets
    R = lam.matrix[o[m]:o[m + 1]]
    nz = np.any(R != 0.0, axis=0)
    counts = np.bincount(lam.patch_of()[nz], minlength=lam.M)
    counts[m] = 0
    return np.flatnonzero(counts)


def sigma_family(lam, m):
    """Matrices ``Sigma_{n;m} = Lambda_mn Lambda_mn^T`` for ``n != m``.

    Blocks ``Lambda_mn`` that are exactly zero are skipped, as is ``n = m``
    (``Sigma_{m;m}`` is the identity and does not affect the minimiser).
    Returns a (count, K_m, K_m) array.
    """
    k = lam.offsets[m + 1] - lam.offsets[m]
    ns = _row_block_patches(lam, m)
    if ns.size == 0 or k == 0:
        return np.zeros((0, k, k))
    out = np.empty((ns.size, k, k))
    for i, n in enumerate(ns):
        B = lam.block(m, n)
        S = B @ B.T
        out[i] = 0.5 * (S + S.T)
    return out


def local_rotations(lam, eps=1e-12, max_sweeps=50, workers=1, energies=None, energy_weight=0.0):
    """Joint-diagonalizing rotation ``D_m`` for every patch.

    With ``energy_weight > 0`` the matrix ``energy_weight * diag(e_m / e_m[0])``
    (``e_m = energies[m]``, the local eigenvalues) joins each nonempty family.
    """
    def one(m):
        k = lam.offsets[m + 1] - lam.offsets[m]
        if k <= 1:
            return np.eye(k), {"sweeps": 0, "converged": True, "off_diag": 0.0, "family": 0}
        fam = sigma_family(lam, m)
        if fam.shape[0] and energy_weight:
            e = np.asarray(energies[m], dtype=float)
            fam = np.concatenate([fam, (energy_weight * np.diag(e / e[0]))[None]])
        if fam.shape[0] == 0:
            return np.eye(k), {"sweeps": 0, "converged": True, "off_diag": 0.0, "family": 0}
        r = joint_diagonalize(fam, eps=eps, max_sweeps=max_sweeps)
        if not r.converged:
            log.info("patch %d: joint diagonalization stopped at %.3e after %d sweeps",
                     m, r.off_diag_energy, r.sweeps)
        return r.rotation, {"sweeps": r.sweeps, "converged": r.converged,
                            "off_diag": r.off_diag_energy, "family": int(fam.shape[0])}

    out = _map(one, range(lam.M), workers)
    return [d for d, _ in out], [i for _, i in out]


def assemble_omega(lam, rotations, scale=None):
    """``Omega = D^T Lambda D`` with ``D = diag(D_1, ..., D_M)``.

    With ``scale`` (the piece norms ``E``) returns ``E Omega E``.
    """
    D = sp.block_diag(rotations, format="csr") if rotations else sp.csr_matrix((0, 0))
    om = (D.T @ (D.T @ lam.matrix).T).T
    role = "omega"
    if scale is not None:
        om = om * scale[:, None] * scale[None, :]
        role = "omega_normalized"
    om = 0.5 * (om + om.T)
    return CorrelationMatrix(np.ascontiguousarray(om), lam.offsets, role)


def _two_means_1d(x):
    """Exact 2-means split of sorted 1-D data; returns the split index."""
    n = x.size
    c1 = np.cumsum(x)
    c2 = np.cumsum(x * x)
    k = np.arange(1, n)
    left = c2[:-1] - c1[:-1] ** 2 / k
    rs = c1[-1] - c1[:-1]
    rs2 = c2[-1] - c2[:-1]
    right = rs2 - rs ** 2 / (n - k)
    return int(np.argmin(left + right)) + 1


def learn_threshold(omega, gap_factor=10.0, bins=50):
    """Learn a cut-off separating noise-level from signal-level entries.

    Runs an exact two-cluster k-means on ``log10`` of the nonzero absolute
    entries of the upper triangle (diagonal included). The threshold is the
    geometric mean of the largest entry of the lower cluster and the smallest
    entry of the upper cluster.

    Raises
    ------
    GapNotFoundError
        If there are fewer than two distinct magnitudes, or the ratio between
        the two clusters is below ``gap_factor``. The error carries a
        histogram ``(counts, edges)`` of the log-magnitudes.
    """
    W = omega.matrix if isinstance(omega, CorrelationMatrix) else np.asarray(omega, dtype=float)
    v = np.abs(W[np.triu_indices(W.shape[0])])
    v = v[v > 0]
    if v.size == 0:
        raise GapNotFoundError("matrix has no nonzero entries", histogram=None, gap=0.0)
    x = np.sort(np.log10(v))
    hist = np.histogram(x, bins=bins)
    if x[-1] == x[0]:
        raise GapNotFoundError("all entries have the same magnitude", histogram=hist, gap=1.0)
    i = _two_means_1d(x)
    lo, hi = x[i - 1], x[i]
    gap = 10.0 ** (hi - lo)
    if gap < gap_factor:
        raise GapNotFoundError(
            f"no gap between small and large entries (ratio {gap:.3g} < {gap_factor:g})",
            histogram=hist, gap=gap)
    return float(10.0 ** (0.5 * (lo + hi)))


def identifiable_pattern(W):
    """True if every connected block of the nonzero pattern of ``W`` is one mode.

    That is, each block is dense and its sign pattern is ``s s^T`` for a
    +-1 vector ``s``, which is what a thresholded ``Omega`` looks like when
    all modes are pairwise identifiable.
    """
    W = np.asarray(W)
    nz = W != 0.0
    ncomp, lab = connected_components(sp.csr_matrix(nz), directed=False)
    for c in range(ncomp):
        idx = np.flatnonzero(lab == c)
        B = W[np.ix_(idx, idx)]
        if not np.all(B != 0.0) or np.any(np.diag(B) < 0):
            return False
        s = np.sign(B[0])
        if not np.array_equal(np.sign(B), np.outer(s, s)):
            return False
    return True


def apply_threshold(omega, eps_th, snap=False):
    """Zero entries of magnitude below ``eps_th``; optionally snap the rest to +-1.

    Snapping only happens when :func:`identifiable_pattern` holds for the
    thresholded matrix. Returns ``(CorrelationMatrix, snapped)``.
    """
    W = omega.matrix.copy()
    W[np.abs(W) < eps_th] = 0.0
    snapped = False
    if snap and identifiable_pattern(W):
        W = np.sign(W)
        snapped = True
    return CorrelationMatrix(W, omega.offsets, omega.role), snapped


def _assemble_modes(bases, P, coeffs, piece_scale=None):
    """``G = G_ext @ coeffs`` computed patch by patch."""
    G = np.zeros((P.n, coeffs.shape[1]))
    o = bases.offsets
    for m, idx in enumerate(P.patches):
        if o[m + 1] == o[m]:
            continue
        Gm = bases.pieces(m)
        if piece_scale is not None:
            Gm = Gm / piece_scale[o[m]:o[m + 1]]
        G[idx] = Gm @ coeffs[o[m]:o[m + 1]]
    return G


def _order_and_sign(G):
    return fix_signs(G)


def _residual(A, G, compute):
    if not compute:
        return None
    from .diagnostics import reconstruction_error
    return reconstruction_error(A, G)


def _front_end(A, P, opts, trunc_tol=None, abs_tol=None, psd_tol=None, energy_weight=None,
               global_floor=False):
    """Shared first two stages; returns ``(bases, lam, timings)``."""
    t = {}
    t0 = time.perf_counter()
    bases = local_bases(A, P, trunc_tol=opts.trunc_tol if trunc_tol is None else trunc_tol,
                        abs_tol=abs_tol, workers=opts.workers, method=opts.eig_method,
                        psd_tol=psd_tol, global_floor=global_floor)
    t1 = time.perf_counter()
    lam = assemble_lambda(A, P, bases)
    t2 = time.perf_counter()
    if energy_weight is None:
        energy_weight = opts.energy_weight or 0.0
    rots, info = local_rotations(lam, eps=opts.jd_eps, max_sweeps=opts.jd_max_sweeps,
                                 workers=opts.workers, energies=bases.eigvals,
                                 energy_weight=energy_weight)
    bases.rotations, bases.jd_info = rots, info
    t3 = time.perf_counter()
    t["local_eig"] = t1 - t0
    t["assemble_lambda"] = t2 - t1
    t["joint_diag"] = t3 - t2
    return bases, lam, t


def _provenance(name, P, opts, timings, bases, **extra):
    info = bases.jd_info or []
    prov = {
        "algorithm": name,
        "partition": P.label,
        "options": opts.to_dict(),
        "timings": {k: float(v) for k, v in timings.items()},
        "jd_sweeps_max": int(max((i["sweeps"] for i in info), default=0)),
        "jd_all_converged": bool(all(i["converged"] for i in info)),
    }
    prov.update(extra)
    return prov


def _patch_up(bases, P, om, pivot_tol, normalize):
    norms = None
    if normalize:
        norms = np.concatenate([bases.piece_norms(m) for m in range(P.M)]) if P.M else np.zeros(0)
    chol = pivoted_cholesky(om.matrix, pivot_tol=pivot_tol, check=False)
    return _assemble_modes(bases, P, chol.lower, piece_scale=norms), chol


def ismd(A, P, opts=None, **kw):
    """Intrinsic sparse mode decomposition of a PSD matrix.

    Parameters
    ----------
    A : (N, N) array_like
        Symmetric positive semidefinite matrix.
    P : Partition
        Partition of ``range(N)``.
    opts : ISMDOptions, optional
        Keyword arguments override individual fields.

    Returns
    -------
    DecompositionResult
        ``G`` has one column per detected mode, in pivot order, each with its
        largest-magnitude entry positive, and ``A ~ G G^T``.

    Notes
    -----
    With ``P`` the single patch this reduces to the eigendecomposition; with
    singletons and ``normalize=True`` it is the pivoted Cholesky factor of
    ``A``.
    """
    opts = _opts(opts, kw)
    A = _check_inputs(A, P)
    return _run_cholesky_variant("ismd", A, P, opts, threshold=opts.threshold)


def ismd_threshold(A, P, opts=None, **kw):
    """ISMD for noisy input: entries of ``Omega`` below a threshold are zeroed.

    The threshold is ``opts.threshold`` if numeric, otherwise learned with
    :func:`learn_threshold`. Without explicit options the local truncation
    is ``trunc_tol = NOISY_TRUNC_TOL`` so that noise-level local eigenvalues
    are dropped; the cut-off is also applied relative to the largest local
    eigenvalue over all patches, so patches holding only noise are emptied.
    Unless ``opts.pivot_tol`` is given, the
    Cholesky patch-up stops once the remaining diagonal drops below
    ``threshold * max(diag(Omega))``.
    """
    base = opts or ISMDOptions(threshold="auto", trunc_tol=NOISY_TRUNC_TOL)
    opts = base.replace(**kw) if kw else base
    if opts.threshold is None:
        opts = opts.replace(threshold="auto")
    A = _check_inputs(A, P)
    return _run_cholesky_variant("threshold", A, P, opts, threshold=opts.threshold)


def _run_cholesky_variant(name, A, P, opts, threshold=None):
    psd_tol = None if threshold is None else np.inf
    bases, lam, t = _front_end(A, P, opts, psd_tol=psd_tol, global_floor=threshold is not None)
    t0 = time.perf_counter()
    norms = None
    if opts.normalize:
        norms = np.concatenate([bases.piece_norms(m) for m in range(P.M)])
    om = assemble_omega(lam, bases.rotations)
    eps_th, snapped = None, False
    pivot_tol = opts.pivot_tol
    if threshold is not None:
        eps_th = learn_threshold(om, gap_factor=opts.gap_factor) if threshold == "auto" \
            else float(threshold)
        om, snapped = apply_threshold(om, eps_th, snap=opts.snap)
    om_used = om
    if norms is not None:
        om_used = CorrelationMatrix(om.matrix * norms[:, None] * norms[None, :], om.offsets,
                                    "omega_normalized")
    if eps_th is not None and pivot_tol is None and om_used.matrix.size:
        pivot_tol = eps_th * float(np.max(np.diag(om_used.matrix)))
    G, chol = _patch_up(bases, P, om_used, pivot_tol, opts.normalize)
    G = _order_and_sign(G)
    t["patchup"] = time.perf_counter() - t0
    t["total"] = sum(t.values())
    res = _residual(A, G, opts.compute_residual)
    prov = _provenance(name, P, opts, t, bases, threshold=eps_th, snapped=snapped,
                       pivot_tol=None if pivot_tol is None else float(pivot_tol))
    return DecompositionResult(ModeSet(G), P, res, prov, bases, lam, om_used)


def ismd_lowrank(A, P, opts=None, **kw):
    """Simultaneously low-rank and patch-wise sparse approximation ``A ~ G G^T``.

    The local pieces are normalized and the normalized ``Omega`` is
    eigendecomposed; eigenpairs are kept up to ``opts.rank`` or until the
    relative spectral error ``||A - G G^T||_2 / ||A||_2`` is at most
    ``opts.error_target`` (the smallest such count). If ``opts.threshold`` is
    set, ``Omega`` is thresholded (and optionally snapped) before
    normalization. The eigendecomposition is done per connected component of
    the nonzero pattern of ``Omega``, so decoupled blocks never mix.

    Local eigenvalues at or below ``local_tol * ||A||_2`` are discarded. When
    ``opts.local_tol`` is None it starts at ``error_target`` and, while the
    target is out of reach, is halved (at most ``MAX_REFINEMENTS`` times,
    and only while local eigenvalues are being discarded). Once the target is
    met, ``EXTRA_REFINEMENTS`` further steps are tried and the result with
    the fewest modes is returned (the coarsest one on ties).

    Raises
    ------
    InfeasibleTargetError
        If the error target cannot be met with the available local pieces,
        or the rank cap exceeds the number of positive eigenvalues.
    """
    opts = _opts(opts, kw)
    if opts.rank is None and opts.error_target is None:
        raise ValidationError("ismd_lowrank needs a rank cap or an error target")
    A = _check_inputs(A, P)
    ev = _ResidualEvaluator(A)
    adaptive = opts.local_tol is None and opts.error_target is not None
    if opts.local_tol is not None:
        local_tol = float(opts.local_tol)
    else:
        local_tol = opts.error_target if opts.error_target is not None else 0.0
    tried = []
    best = last_exc = None
    extra = 0
    for _ in range(MAX_REFINEMENTS + 1):
        try:
            res = _lowrank_once(A, P, opts, ev, local_tol)
        except InfeasibleTargetError as exc:
            last_exc = exc
            tried.append(local_tol)
            if not adaptive or exc.next_local_tol is None:
                if best is not None:
                    break
                raise
            log.info("target %.3g missed at local_tol %.4g (best %.4g); refining",
                     opts.error_target, local_tol, exc.best_residual)
            local_tol = exc.next_local_tol
            continue
        tried.append(local_tol)
        if best is None or res.rank < best.rank:
            best = res
        nxt = res.provenance.pop("next_local_tol")
        extra += 1
        if not adaptive or extra > EXTRA_REFINEMENTS or nxt is None:
            break
        local_tol = nxt
    if best is None:
        raise last_exc
    best.provenance.pop("next_local_tol", None)
    best.provenance["local_tol_history"] = tried
    return best


MAX_REFINEMENTS = 20
# refinements tried after the first feasible local_tol; the fewest modes win
EXTRA_REFINEMENTS = 1


class _ResidualEvaluator:
    """Relative spectral residual with ``||A||_2`` computed once."""

    def __init__(self, A):
        from .diagnostics import spectral_norm_sym
        self.A = A
        self.norm = spectral_norm_sym(A)

    def __call__(self, G):
        from .diagnostics import spectral_norm_sym
        R = self.A - G @ G.T
        return spectral_norm_sym(0.5 * (R + R.T)) / self.norm if self.norm > 0 else 0.0


def _lowrank_once(A, P, opts, ev, local_tol):
    weight = LOWRANK_ENERGY_WEIGHT if opts.energy_weight is None else opts.energy_weight
    bases, lam, t = _front_end(A, P, opts, abs_tol=local_tol * ev.norm, psd_tol=np.inf,
                               energy_weight=weight)
    t0 = time.perf_counter()
    om = assemble_omega(lam, bases.rotations)
    eps_th, snapped = None, False
    if opts.threshold is not None:
        eps_th = learn_threshold(om, gap_factor=opts.gap_factor) if opts.threshold == "auto" \
            else float(opts.threshold)
        om, snapped = apply_threshold(om, eps_th, snap=opts.snap)
    norms = np.concatenate([bases.piece_norms(m) for m in range(P.M)])
    ombar = CorrelationMatrix(om.matrix * norms[:, None] * norms[None, :], om.offsets,
                              "omega_normalized")
    vals, vecs = _blockwise_eigh(ombar.matrix)
    pos = int(np.sum(vals > 0))
    Gfull = _assemble_modes(bases, P, vecs[:, :pos] * np.sqrt(vals[:pos]), piece_scale=norms)
    t["patchup"] = time.perf_counter() - t0
    # halve the local tolerance while anything positive was discarded
    next_tol = 0.5 * local_tol if any(tl > 0 for tl in bases.tails) else None
    t1 = time.perf_counter()

    def resid(k):
        return ev(Gfull[:, :k])

    cap = pos if opts.rank is None else int(opts.rank)
    if cap > pos:
        err = InfeasibleTargetError(
            f"rank cap {cap} exceeds the {pos} positive eigenvalues available",
            best_residual=resid(pos))
        err.next_local_tol = next_tol
        raise err
    if opts.error_target is None:
        k = cap
        r = resid(k)
    else:
        target = opts.error_target
        r_cap = resid(cap)
        if r_cap > target:
            err = InfeasibleTargetError(
                f"error target {target:g} not reachable with {cap} modes (best {r_cap:.4g})",
                best_residual=r_cap)
            err.next_local_tol = next_tol if opts.rank is None else None
            raise err
        lo, hi = 0, cap  # invariant: resid(hi) <= target
        cache = {cap: r_cap}
        while hi - lo > 1:
            mid = (lo + hi) // 2
            cache[mid] = resid(mid)
            if cache[mid] <= target:
                hi = mid
            else:
                lo = mid
        k, r = hi, cache[hi]
    G = _order_and_sign(Gfull[:, :k])
    t["select_rank"] = time.perf_counter() - t1
    t["total"] = sum(t.values())
    prov = _provenance("lowrank", P, opts, t, bases, threshold=eps_th, snapped=snapped,
                       local_tol=float(local_tol), norm_A=float(ev.norm), next_local_tol=next_tol,
                       omega_eigenvalues=[float(v) for v in vals[:k]])
    return DecompositionResult(ModeSet(G), P, float(r), prov, bases, lam, ombar)


def _blockwise_eigh(W):
    """Eigendecomposition of a symmetric matrix one connected component at a time.

    Returns eigenvalues in descending order with the matching eigenvectors.
    Ties are broken by component order, so exactly decoupled blocks never mix.
    """
    n = W.shape[0]
    if n == 0:
        return np.zeros(0), np.zeros((0, 0))
    ncomp, lab = connected_components(sp.csr_matrix(W != 0.0), directed=False)
    vals, cols, comp = [], [], []
    for c in range(ncomp):
        idx = np.flatnonzero(lab == c)
        w, V = scipy.linalg.eigh(W[np.ix_(idx, idx)])
        for j in range(w.size):
            v = np.zeros(n)
            v[idx] = V[:, j]
            vals.append(w[j])
            cols.append(v)
            comp.append(c)
    vals = np.array(vals)
    order = np.lexsort((np.array(comp), -vals))
    return vals[order], np.array(cols).T[:, order]


def sparse_orthogonal_factorize(X, P, opts=None, **kw):
    """Factor ``X = G U^T`` with patch-wise sparse ``G`` and orthonormal ``U``.

    ``G`` comes from :func:`ismd` applied to ``X X^T``; then
    ``U = X^T G (G^T G)^{-1}``.

    Returns ``(ModeSet, U, DecompositionResult)``.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] != P.n:
        raise ValidationError(f"X must have {P.n} rows, got shape {X.shape}")
    A = X @ X.T
    res = ismd(0.5 * (A + A.T), P, opts, **kw)
    G = res.G
    gram = G.T @ G
    U = scipy.linalg.solve(gram, G.T @ X, assume_a="pos").T
    return res.modes, U, res
