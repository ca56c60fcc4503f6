"""Partitions of an index set and patch-level sparsity measures."""
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

DEFAULT_SUPPORT_RTOL = 1e-9


class Partition:
    """Disjoint cover of ``range(n)`` by non-empty index sets (patches).

    Parameters
    ----------
    n : int
        Size of the index set.
    patches : sequence of array_like of int
        The patches, in order. Each is stored as a sorted ``int64`` array.
    """

    def __init__(self, n, patches, label=None):
        n = int(n)
        if n <= 0:
            raise ValidationError("partition size must be positive")
        arrs = []
        for i, p in enumerate(patches):
            a = np.unique(np.asarray(p, dtype=np.int64))
            if a.size == 0:
                raise ValidationError(f"patch {i} is empty")
            if a.size != len(p):
                raise ValidationError(f"patch {i} has repeated indices")
            arrs.append(a)
        if not arrs:
            raise ValidationError("partition has no patches")
        labels = np.full(n, -1, dtype=np.int64)
        for i, a in enumerate(arrs):
            if a[0] < 0 or a[-1] >= n:
                raise ValidationError(f"patch {i} has indices outside [0, {n})")
            if np.any(labels[a] >= 0):
                raise ValidationError(f"patch {i} overlaps an earlier patch")
            labels[a] = i
        if np.any(labels < 0):
            raise ValidationError(f"{int(np.sum(labels < 0))} indices are not covered")
        self.n = n
        self.patches = tuple(arrs)
        self.labels = labels
        self.label = label
        for a in arrs:
            a.setflags(write=False)
        labels.setflags(write=False)

    @property
    def M(self):
        return len(self.patches)

    @property
    def sizes(self):
        return np.array([a.size for a in self.patches])

    def __len__(self):
        return len(self.patches)

    def __iter__(self):
        return iter(self.patches)

    def __getitem__(self, m):
        return self.patches[m]

    def __eq__(self, other):
        if not isinstance(other, Partition):
            return NotImplemented
        return self.n == other.n and self.M == other.M and all(
            np.array_equal(a, b) for a, b in zip(self.patches, other.patches))

    def __repr__(self):
        lab = f", label={self.label!r}" if self.label else ""
        return f"Partition(n={self.n}, M={self.M}{lab})"

    def to_dict(self):
        return {"n": self.n, "patches": [a.tolist() for a in self.patches]}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d, label=None):
        try:
            return cls(d["n"], d["patches"], label=label)
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed partition object: {exc}") from exc

    @classmethod
    def from_json(cls, text, label=None):
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"partition JSON does not parse: {exc}") from exc
        return cls.from_dict(d, label=label)


def uniform_grid_partition(grid_shape, patch_shape):
    """Split a 1-D or 2-D grid into equal contiguous blocks.

    Grid points are flattened row-major. Patches are ordered row-major over
    the block layout, e.g. ``uniform_grid_partition((96, 96), (12, 12))``
    yields 64 patches of 144 indices.
    """
    grid = tuple(int(g) for g in np.atleast_1d(grid_shape))
    patch = tuple(int(p) for p in np.atleast_1d(patch_shape))
    if len(grid) not in (1, 2) or len(patch) != len(grid):
        raise ValidationError(f"grid {grid} and patch {patch} must both be 1-D or 2-D")
    if any(p <= 0 for p in patch) or any(g % p for g, p in zip(grid, patch)):
        raise ValidationError(f"patch shape {patch} does not divide grid shape {grid}")
    idx = np.arange(int(np.prod(grid))).reshape(grid)
    patches = []
    if len(grid) == 1:
        for i in range(0, grid[0], patch[0]):
            patches.append(idx[i:i + patch[0]])
    else:
        for i in range(0, grid[0], patch[0]):
            for j in range(0, grid[1], patch[1]):
                patches.append(idx[i:i + patch[0], j:j + patch[1]].ravel())
    label = "x".join(map(str, grid)) + "/" + "x".join(map(str, patch))
    return Partition(idx.size, patches, label=label)


def coarsest_partition(n):
    """The single-patch partition ``{[n]}``."""
    return Partition(n, [np.arange(n)], label=f"{n}/{n}")


def finest_partition(n):
    """The partition into singletons."""
    return Partition(n, [[i] for i in range(n)], label=f"{n}/1")


def is_refinement(fine, coarse):
    """True iff every patch of ``fine`` lies inside a single patch of ``coarse``."""
    if fine.n != coarse.n:
        raise ValidationError("partitions have different sizes")
    return all(np.all(coarse.labels[p] == coarse.labels[p[0]]) for p in fine.patches)


def _patch_maxabs(V, P):
    """(M, K) array with the max-abs of each column of ``V`` on each patch."""
    V = np.abs(V)
    order = np.argsort(P.labels, kind="stable")
    starts = np.concatenate([[0], np.cumsum(P.sizes)[:-1]])
    return np.maximum.reduceat(V[order], starts, axis=0)


def _support_tol(V, support_tol, rtol):
    if support_tol is not None:
        return np.full(V.shape[1], float(support_tol))
    return rtol * (np.max(np.abs(V), axis=0) if V.shape[0] else np.zeros(V.shape[1]))


def patch_sparseness(mode, P, support_tol=None, rtol=DEFAULT_SUPPORT_RTOL):
    """Number of patches on which ``mode`` has an entry above ``support_tol``.

    ``support_tol`` defaults to ``rtol * max|mode|``.
    """
    v = np.asarray(mode, dtype=float)
    if v.ndim != 1 or v.size != P.n:
        raise ValidationError(f"mode length {v.size} does not match partition size {P.n}")
    V = v[:, None]
    tol = _support_tol(V, support_tol, rtol)
    return int(np.sum(_patch_maxabs(V, P)[:, 0] > tol[0]))


@dataclass
class ModeSet:
    """A collection of ``K`` modes stored as the columns of an ``n x K`` array.

    Supports are measured with a per-mode tolerance: an entry belongs to the
    support when ``|entry| > support_tol``, or, when ``support_tol`` is None,
    ``|entry| > rtol * max|mode|``.
    """

    G: np.ndarray
    support_tol: float = None
    rtol: float = DEFAULT_SUPPORT_RTOL
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        G = np.asarray(self.G, dtype=float)
        if G.ndim == 1:
            G = G[:, None]
        if G.ndim != 2:
            raise ValidationError("modes must be a 2-D array")
        self.G = G

    @property
    def n(self):
        return self.G.shape[0]

    @property
    def K(self):
        return self.G.shape[1]

    def __len__(self):
        return self.K

    def tolerances(self):
        return _support_tol(self.G, self.support_tol, self.rtol)

    def support_matrix(self, P):
        """Boolean (M, K) matrix; entry (m, k) says mode k is nonzero on patch m."""
        if P.n != self.n:
            raise ValidationError(f"partition size {P.n} does not match mode length {self.n}")
        if self.K == 0:
            return np.zeros((P.M, 0), dtype=bool)
        return _patch_maxabs(self.G, P) > self.tolerances()

    def support_patches(self, P):
        """List of frozensets of patch indices, one per mode."""
        S = self.support_matrix(P)
        return [frozenset(np.flatnonzero(S[:, k]).tolist()) for k in range(self.K)]

    def sparseness(self, P):
        return self.support_matrix(P).sum(axis=0)

    def local_dimensions(self, P):
        return self.support_matrix(P).sum(axis=1)

    def gram(self):
        return self.G @ self.G.T


def local_dimension(modes, P, m):
    """Number of modes that are nonzero on patch ``m``."""
    if not 0 <= m < P.M:
        raise ValidationError(f"patch index {m} out of range for M = {P.M}")
    return int(modes.support_matrix(P)[m].sum())


def unidentifiable_groups(modes, P):
    """Group mode indices by equal support-patch sets.

    Returns a list of lists, ordered by the first mode index in each group.
    """
    groups = {}
    for k, s in enumerate(modes.support_patches(P)):
        groups.setdefault(s, []).append(k)
    return sorted(groups.values(), key=lambda g: g[0])


def is_regular_sparse(modes, P, rank_rtol=1e-10):
    """Check whether the given modes certify ``P`` as regular-sparse.

    On every patch the restrictions of the modes that are nonzero there must
    be linearly independent.
    """
    S = modes.support_matrix(P)
    for m, idx in enumerate(P.patches):
        cols = np.flatnonzero(S[m])
        if cols.size <= 1:
            continue
        B = modes.G[np.ix_(idx, cols)]
        if cols.size > idx.size:
            return False
        s = np.linalg.svd(B, compute_uv=False)
        if s[-1] <= rank_rtol * s[0]:
            return False
    return True
