"""Seeded generators for covariance fixtures with known sparse modes.

The localized fixtures mimic a permeability field with a constant background
and localized features: channel strips, rectangular or elliptic inclusions
and one "face" mode made of disjoint blobs. Feature geometry is drawn from
the seed; features that would break a requested certificate (regular
sparseness or pairwise identifiability on a given patch size) are rejected
and redrawn.
"""
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.sparse.linalg import eigsh

from .errors import ValidationError
from .partition import ModeSet, is_regular_sparse, uniform_grid_partition


@dataclass
class FieldFixture:
    """Ground-truth modes (columns of ``modes.G``) and ``A = G G^T``."""

    grid: tuple
    modes: ModeSet
    A: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def K(self):
        return self.modes.K

    @property
    def G(self):
        return self.modes.G

    @property
    def n(self):
        return self.A.shape[0]

    def partition(self, patch_shape):
        return uniform_grid_partition(self.grid, patch_shape)


@dataclass
class FeatureConfig:
    """Feature counts and geometry for :func:`gen_localized_field`.

    Sizes are in grid cells. ``channel_width`` defaults to ``round(n / 32)``
    (at least 1). ``certify`` lists patch shapes on which the fixture must be
    regular-sparse; ``identifiable`` lists patch shapes on which all modes
    must also have pairwise distinct patch supports.
    """

    n_channels: int = 8
    n_inclusions: int = 9
    face: bool = True
    channel_width: int = None
    channel_length: tuple = (0.35, 1.0)
    inclusion_size: tuple = (3, 7)
    amplitude: tuple = (1.0, 1.0)
    certify: list = field(default_factory=lambda: [(12, 12), (6, 6)])
    identifiable: list = field(default_factory=lambda: [(6, 6)])
    max_tries: int = 2000

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("certify", "identifiable"):
            if key in d:
                d[key] = [tuple(x) for x in d[key]]
        for key in ("channel_length", "inclusion_size", "amplitude"):
            if key in d:
                d[key] = tuple(d[key])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ValidationError(f"bad feature config: {exc}") from exc

    def to_dict(self):
        return {k: (list(map(list, v)) if k in ("certify", "identifiable") else
                    list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


DESK_CONFIG = FeatureConfig()


def _channel(rng, grid, width, length_frac):
    ny, nx = grid
    img = np.zeros(grid)
    horizontal = rng.random() < 0.5
    span = nx if horizontal else ny
    across = ny if horizontal else nx
    length = max(width + 1, int(round(rng.uniform(*length_frac) * span)))
    length = min(length, span)
    start = int(rng.integers(0, span - length + 1))
    off = int(rng.integers(0, across - width + 1))
    if horizontal:
        img[off:off + width, start:start + length] = 1.0
        box = (off, start, width, length)
    else:
        img[start:start + length, off:off + width] = 1.0
        box = (start, off, length, width)
    return img, {"type": "channel", "orientation": "horizontal" if horizontal else "vertical",
                 "box": [int(b) for b in box]}


def _inclusion(rng, grid, size):
    ny, nx = grid
    h = int(rng.integers(size[0], size[1] + 1))
    w = int(rng.integers(size[0], size[1] + 1))
    r0 = int(rng.integers(0, ny - h + 1))
    c0 = int(rng.integers(0, nx - w + 1))
    img = np.zeros(grid)
    if rng.random() < 0.5:
        img[r0:r0 + h, c0:c0 + w] = 1.0
        kind = "rectangle"
    else:
        yy, xx = np.mgrid[0:h, 0:w]
        cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
        mask = ((yy - cy) / (h / 2.0)) ** 2 + ((xx - cx) / (w / 2.0)) ** 2 <= 1.0
        img[r0:r0 + h, c0:c0 + w][mask] = 1.0
        kind = "ellipse"
    return img, {"type": kind, "box": [r0, c0, h, w]}


def _face(rng, grid):
    """Two eyes and a mouth: three disjoint blobs far apart."""
    ny, nx = grid
    s = max(1, min(ny, nx) // 16)
    height = 8 * s
    width = 8 * s
    r0 = int(rng.integers(0, ny - height + 1))
    c0 = int(rng.integers(0, nx - width + 1))
    img = np.zeros(grid)
    img[r0 + s:r0 + 3 * s, c0 + s:c0 + 3 * s] = 1.0
    img[r0 + s:r0 + 3 * s, c0 + 5 * s:c0 + 7 * s] = 1.0
    img[r0 + 6 * s:r0 + 7 * s, c0 + s:c0 + 7 * s] = 1.0
    return img, {"type": "face", "box": [r0, c0, height, width]}


def _check(G, partitions, ident_partitions, skip=0):
    # identifiability is only asked of columns from ``skip`` on
    ms = ModeSet(G)
    for P in partitions:
        if not is_regular_sparse(ms, P):
            return False
    for P in ident_partitions:
        sets = ms.support_patches(P)[skip:]
        if len(set(sets)) != len(sets):
            return False
    return True


def certify(modes, grid, patch_shapes, identifiable=()):
    """Certificate dictionary keyed by partition label."""
    out = {}
    ident = {tuple(p) for p in identifiable}
    for ps in patch_shapes:
        P = uniform_grid_partition(grid, ps)
        sets = modes.support_patches(P)
        out[P.label] = {
            "regular_sparse": bool(is_regular_sparse(modes, P)),
            "identifiable": bool(len(set(sets)) == len(sets)),
            "required_identifiable": tuple(ps) in ident,
        }
    return out


def _place(grid, cfg, rng, extra=None):
    grid = tuple(int(g) for g in grid)
    if len(grid) != 2 or min(grid) < 2:
        raise ValidationError(f"grid must be 2-D with at least 2 cells per side, got {grid}")
    width = cfg.channel_width or max(1, int(round(min(grid) / 32)))
    if width < 1 or width > min(grid):
        raise ValidationError(f"channel width {width} outside grid {grid}")
    lo, hi = cfg.inclusion_size
    if lo < 1 or hi > min(grid) or lo > hi:
        raise ValidationError(f"inclusion size range {cfg.inclusion_size} outside grid {grid}")
    parts = [uniform_grid_partition(grid, p) for p in cfg.certify]
    ident = [uniform_grid_partition(grid, p) for p in cfg.identifiable]
    kinds = ["channel"] * cfg.n_channels + ["inclusion"] * cfg.n_inclusions
    if cfg.face:
        kinds.append("face")
    cols = [] if extra is None else [extra[:, j] for j in range(extra.shape[1])]
    n_extra = len(cols)
    feats = []
    for kind in kinds:
        for _ in range(cfg.max_tries):
            if kind == "channel":
                img, info = _channel(rng, grid, width, cfg.channel_length)
            elif kind == "inclusion":
                img, info = _inclusion(rng, grid, cfg.inclusion_size)
            else:
                img, info = _face(rng, grid)
            amp = float(rng.uniform(*cfg.amplitude))
            g = amp * img.ravel()
            if _check(np.column_stack(cols + [g]), parts, ident, skip=n_extra):
                break
        else:
            raise ValidationError(f"could not place a {kind} satisfying the certificates "
                                  f"after {cfg.max_tries} tries")
        info["amplitude"] = amp
        cols.append(g)
        feats.append(info)
    return np.column_stack(cols[n_extra:]) if len(cols) > n_extra else np.zeros((grid[0] * grid[1], 0)), feats


def gen_localized_field(grid=(48, 48), features=None, seed=0):
    """Covariance of a field with localized indicator features.

    Parameters
    ----------
    grid : (int, int)
        Grid shape; points are flattened row-major.
    features : FeatureConfig or dict, optional
        Defaults to 8 channels, 9 inclusions and one face mode (K = 18).
    seed : int

    Returns
    -------
    FieldFixture
    """
    cfg = features if isinstance(features, FeatureConfig) else FeatureConfig.from_dict(features or {})
    rng = np.random.default_rng(seed)
    G, feats = _place(grid, cfg, rng)
    modes = ModeSet(G)
    A = G @ G.T
    meta = {"kind": "localized", "seed": int(seed), "grid": list(grid), "features": feats,
            "config": cfg.to_dict(),
            "certificates": certify(modes, grid, cfg.certify, cfg.identifiable)}
    return FieldFixture(tuple(grid), modes, A, meta)


def global_modes(grid):
    """The two sine modes ``sin(2 pi x1 + 4 pi x2) / 2`` and ``sin(4 pi x1 + 2 pi x2) / 2``.

    Evaluated at cell centres; ``x1`` runs along columns and ``x2`` along rows.
    """
    ny, nx = grid
    x2, x1 = np.meshgrid((np.arange(ny) + 0.5) / ny, (np.arange(nx) + 0.5) / nx, indexing="ij")
    f1 = 0.5 * np.sin(2 * np.pi * x1 + 4 * np.pi * x2)
    f2 = 0.5 * np.sin(4 * np.pi * x1 + 2 * np.pi * x2)
    return np.column_stack([f1.ravel(), f2.ravel()])


def gen_global_plus_local(grid=(48, 48), features=None, seed=0):
    """Localized features plus two global sine modes (appended last).

    Identifiability certificates apply to the localized modes only; the two
    global modes necessarily share their support.
    """
    cfg = features if isinstance(features, FeatureConfig) else FeatureConfig.from_dict(features or {})
    rng = np.random.default_rng(seed)
    F = global_modes(grid)
    G_loc, feats = _place(grid, cfg, rng, extra=F)
    G = np.column_stack([G_loc, F])
    modes = ModeSet(G)
    A = G @ G.T
    meta = {"kind": "global", "seed": int(seed), "grid": list(grid), "features": feats,
            "global_columns": [G_loc.shape[1], G_loc.shape[1] + 1], "config": cfg.to_dict(),
            "certificates": certify(modes, grid, cfg.certify),
            "local_certificates": certify(ModeSet(G_loc), grid, cfg.certify, cfg.identifiable)}
    return FieldFixture(tuple(grid), modes, A, meta)


def gen_exponential_kernel(n=1024, l=1.0 / 16, domain=(-1.0, 1.0)):
    """``A_ij = exp(-|x_i - x_j| / l)`` on ``n`` equispaced points including both ends."""
    if n < 2 or l <= 0:
        raise ValidationError("need n >= 2 and l > 0")
    x = np.linspace(domain[0], domain[1], int(n))
    return np.exp(-np.abs(x[:, None] - x[None, :]) / l)


def gen_counterexample():
    """Two modes that are proportional on every patch (not regular-sparse).

    Returns ``(FieldFixture, Partition)`` on 8 points split into two halves.
    ``Lambda`` is then the sum of two rank-one projectors at an angle with
    cosine ``3 / sqrt(10)``, so its eigenvalues ``1 +- 3 / sqrt(10)`` are not
    integers.
    """
    g1 = np.ones(8)
    g2 = np.array([1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0])
    G = np.column_stack([g1, g2])
    fx = FieldFixture((8,), ModeSet(G), G @ G.T, {"kind": "counterexample"})
    return fx, uniform_grid_partition(8, 4)


def _spectral_norm(S):
    n = S.shape[0]
    if n <= 2000:
        w = scipy.linalg.eigvalsh(S)
        return float(max(abs(w[0]), abs(w[-1])))
    v0 = np.ones(n) / np.sqrt(n)
    return float(abs(eigsh(S, k=1, which="LM", tol=1e-12, v0=v0, return_eigenvectors=False)[0]))


def noise_matrix(n, seed=0):
    """Symmetric noise: i.i.d. Uniform[-1, 1], symmetrized, scaled to unit spectral norm."""
    rng = np.random.default_rng(seed)
    T = rng.uniform(-1.0, 1.0, size=(n, n))
    S = 0.5 * (T + T.T)
    return S / _spectral_norm(S)


def add_noise(A, eps, seed=0):
    """Return ``A + eps * S`` with ``S`` from :func:`noise_matrix`."""
    A = np.asarray(A, dtype=float)
    if eps < 0:
        raise ValidationError("noise level must be non-negative")
    if eps == 0:
        return A.copy()
    out = A + eps * noise_matrix(A.shape[0], seed)
    return 0.5 * (out + out.T)
