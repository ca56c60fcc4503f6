"""File interchange: Matrix Market matrices, JSON metadata, CSV tables."""
import csv
import json
import os
import re

import numpy as np
import scipy.io
import scipy.sparse as sp

from .errors import ValidationError
from .partition import Partition, uniform_grid_partition

MM_PRECISION = 17


def write_matrix(path, M, symmetric=None, comment=""):
    """Write a dense matrix in Matrix Market array format.

    Symmetric matrices are stored with the ``symmetric`` qualifier (lower
    triangle only). ``symmetric=None`` detects exact symmetry.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim == 1:
        M = M[:, None]
    if symmetric is None:
        symmetric = M.shape[0] == M.shape[1] and np.array_equal(M, M.T)
    scipy.io.mmwrite(str(path), M, comment=comment, field="real", precision=MM_PRECISION,
                     symmetry="symmetric" if symmetric else "general")


def read_matrix(path):
    """Read a Matrix Market file into a dense float array."""
    if not os.path.exists(path):
        raise ValidationError(f"matrix file not found: {path}")
    try:
        M = scipy.io.mmread(str(path))
    except (ValueError, OSError, IndexError) as exc:
        raise ValidationError(f"cannot read Matrix Market file {path}: {exc}") from exc
    if sp.issparse(M):
        M = M.toarray()
    return np.asarray(M, dtype=float)


def _default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (set, frozenset, tuple)):
        return sorted(o) if isinstance(o, (set, frozenset)) else list(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def dumps(obj):
    """Deterministic JSON text (sorted keys, shortest round-trip floats)."""
    return json.dumps(obj, sort_keys=True, indent=2, default=_default, allow_nan=True)


def write_json(path, obj):
    with open(path, "w") as fh:
        fh.write(dumps(obj))
        fh.write("\n")


def read_json(path):
    if not os.path.exists(path):
        raise ValidationError(f"file not found: {path}")
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path} is not valid JSON: {exc}") from exc


def write_csv(path, rows, columns):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore",
                           lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(r[k])) if isinstance(r[k], (float, np.floating))
                            else r[k]) for k in columns})


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


_GRID = re.compile(r"^grid:(\d+(?:x\d+)?)/(\d+(?:x\d+)?)$")


def parse_partition(spec):
    """Partition from ``"grid:96x96/12x12"``, ``"grid:1024/128"`` or a JSON file path.

    The JSON file holds ``{"n": N, "patches": [[...], ...]}``.
    """
    if isinstance(spec, Partition):
        return spec
    spec = str(spec).strip()
    m = _GRID.match(spec)
    if m:
        grid = tuple(int(v) for v in m.group(1).split("x"))
        patch = tuple(int(v) for v in m.group(2).split("x"))
        return uniform_grid_partition(grid, patch)
    if spec.startswith("grid:"):
        raise ValidationError(f"malformed grid partition spec {spec!r}; "
                              "expected e.g. grid:96x96/12x12")
    d = read_json(spec)
    return Partition.from_dict(d, label=os.path.basename(spec))
