"""Verification tools: spectra, mode matching, residuals, consistency, timing."""
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.sparse.linalg import LinearOperator, eigsh

from .errors import GapNotFoundError, ValidationError
from .partition import ModeSet, is_refinement

DENSE_RESIDUAL_MAX_N = 1500


def _matrix(x):
    return x.matrix if hasattr(x, "matrix") else np.asarray(x, dtype=float)


def _modes(x):
    if isinstance(x, ModeSet):
        return x.G
    if hasattr(x, "modes"):
        return x.modes.G
    G = np.asarray(x, dtype=float)
    return G[:, None] if G.ndim == 1 else G


def _modeset(x):
    if isinstance(x, ModeSet):
        return x
    return x.modes if hasattr(x, "modes") else ModeSet(x)


def integer_spectrum_test(lam, tol=1e-6):
    """Check that every eigenvalue of ``Lambda`` is within ``tol`` of a non-negative integer.

    Returns ``(passed, eigenvalues, max_deviation)``; eigenvalues descending.
    """
    w = scipy.linalg.eigvalsh(_matrix(lam))[::-1]
    if w.size == 0:
        return True, w, 0.0
    dev = np.abs(w - np.maximum(np.round(w), 0.0))
    mx = float(dev.max())
    return bool(mx <= tol), w, mx


@dataclass
class MatchReport:
    """Pairing of candidate modes with reference modes.

    ``assignment[i]`` is the candidate index matched to truth mode ``i``
    (or -1), ``signs[i]`` the sign applied to that candidate.
    """

    assignment: np.ndarray
    signs: np.ndarray
    errors: np.ndarray
    err_inf: float
    err_2: float
    correlations: np.ndarray
    unmatched_candidates: list = field(default_factory=list)
    unmatched_truth: list = field(default_factory=list)
    flagged: list = field(default_factory=list)

    def to_dict(self):
        return {
            "assignment": [int(a) for a in self.assignment],
            "signs": [int(s) for s in self.signs],
            "errors": [float(e) for e in self.errors],
            "err_inf": float(self.err_inf),
            "err_2": float(self.err_2),
            "unmatched_candidates": [int(i) for i in self.unmatched_candidates],
            "unmatched_truth": [int(i) for i in self.unmatched_truth],
            "flagged": [int(i) for i in self.flagged],
        }


def match_modes(candidate, truth, flag_below=0.9):
    """Greedy one-to-one matching of candidate modes to reference modes.

    Pairs are taken in order of decreasing absolute cosine similarity. For
    every pair the sign minimising ``||s * g_hat - g||`` is used, and the
    relative error ``||s * g_hat - g||_2 / ||g||_2`` is recorded.
    ``err_inf`` is the largest and ``err_2`` the root-sum-square of these.
    Pairs with correlation below ``flag_below`` are listed in ``flagged``.
    """
    C = _modes(candidate)
    T = _modes(truth)
    if C.shape[0] != T.shape[0]:
        raise ValidationError("candidate and truth modes have different lengths")
    kc, kt = C.shape[1], T.shape[1]
    nc = np.linalg.norm(C, axis=0)
    nt = np.linalg.norm(T, axis=0)
    corr = np.abs(T.T @ C) / np.maximum(np.outer(nt, nc), np.finfo(float).tiny)
    assignment = np.full(kt, -1)
    used_c = np.zeros(kc, dtype=bool)
    order = np.argsort(-corr, axis=None, kind="stable")
    done = 0
    for flat in order:
        if done == min(kc, kt):
            break
        i, j = divmod(int(flat), kc)
        if assignment[i] >= 0 or used_c[j]:
            continue
        assignment[i] = j
        used_c[j] = True
        done += 1
    signs = np.zeros(kt, dtype=int)
    errors = np.full(kt, np.nan)
    corrs = np.zeros(kt)
    for i, j in enumerate(assignment):
        if j < 0:
            continue
        ep = np.linalg.norm(C[:, j] - T[:, i])
        em = np.linalg.norm(C[:, j] + T[:, i])
        signs[i] = 1 if ep <= em else -1
        errors[i] = min(ep, em) / nt[i] if nt[i] > 0 else min(ep, em)
        corrs[i] = corr[i, j]
    ok = assignment >= 0
    err_inf = float(np.max(errors[ok])) if ok.any() else np.nan
    err_2 = float(np.sqrt(np.sum(errors[ok] ** 2))) if ok.any() else np.nan
    return MatchReport(
        assignment, signs, errors, err_inf, err_2, corrs,
        unmatched_candidates=[int(j) for j in np.flatnonzero(~used_c)],
        unmatched_truth=[int(i) for i in np.flatnonzero(~ok)],
        flagged=[int(i) for i in np.flatnonzero(ok & (corrs < flag_below))],
    )


def spectral_norm_sym(S, tol=1e-10):
    """Spectral norm of a symmetric matrix: its largest absolute eigenvalue.

    Only the two extreme eigenvalues are computed for ``N <= 1500``;
    above that, Lanczos on the matrix.
    """
    S = np.asarray(S, dtype=float)
    n = S.shape[0]
    if n == 0:
        return 0.0
    if n <= DENSE_RESIDUAL_MAX_N:
        lo = scipy.linalg.eigvalsh(S, subset_by_index=[0, 0])[0]
        hi = scipy.linalg.eigvalsh(S, subset_by_index=[n - 1, n - 1])[0]
        return float(max(abs(lo), abs(hi)))
    v0 = np.ones(n) / np.sqrt(n)
    return float(abs(eigsh(S, k=1, which="LM", tol=tol, v0=v0, return_eigenvectors=False)[0]))


def reconstruction_error(A, modes, tol=1e-10):
    """Relative spectral error ``||A - G G^T||_2 / ||A||_2``.

    Dense symmetric eigenvalues for ``N <= 1500``; above that, Lanczos
    (``eigsh``) on the operator ``x -> A x - G (G^T x)``.
    """
    A = np.asarray(A, dtype=float)
    G = _modes(modes)
    if G.shape[0] != A.shape[0]:
        raise ValidationError("modes and matrix have different sizes")
    n = A.shape[0]
    if n <= DENSE_RESIDUAL_MAX_N:
        R = A - G @ G.T
        num = spectral_norm_sym(0.5 * (R + R.T))
        den = spectral_norm_sym(A)
    else:
        def norm2(mv):
            op = LinearOperator((n, n), matvec=mv, dtype=float)
            v0 = np.ones(n) / np.sqrt(n)
            return float(abs(eigsh(op, k=1, which="LM", tol=tol, v0=v0,
                                   return_eigenvectors=False)[0]))
        den = norm2(lambda x: A @ x)
        num = norm2(lambda x: A @ x - G @ (G.T @ x))
    return float(num / den) if den > 0 else float(num)


def principal_angles(X, Y):
    """Principal angles (radians, ascending) between the column spans of X and Y."""
    return np.sort(scipy.linalg.subspace_angles(np.asarray(X, float), np.asarray(Y, float)))


@dataclass
class ConsistencyReport:
    """Result of comparing decompositions on a partition and its refinement."""

    pairs: list
    violations: list
    identifiable_max_error: float
    match: MatchReport

    @property
    def consistent(self):
        return not self.violations

    def to_dict(self):
        return {"consistent": self.consistent, "violations": self.violations,
                "identifiable_max_error": self.identifiable_max_error,
                "pairs": self.pairs}


def support_consistency_report(coarse_result, fine_result, Pc, Pf):
    """Check that refining the partition keeps the modes' patch supports.

    Modes are paired with :func:`match_modes`. For every pair the
    fine-partition support must be contained in the coarse-partition mode's
    fine support, and both modes must touch the same coarse patches. A
    missing partner also counts as a violation. ``identifiable_max_error``
    is the largest relative error over pairs whose coarse mode is
    identifiable (its support set is not shared with another mode).
    """
    if not is_refinement(Pf, Pc):
        raise ValidationError("fine partition is not a refinement of the coarse one")
    Mc = _modeset(coarse_result)
    Mf = _modeset(fine_result)
    rep = match_modes(Mf, Mc)
    sc_c = Mc.support_patches(Pc)
    sc_f = Mf.support_patches(Pc)
    sf_c = Mc.support_patches(Pf)
    sf_f = Mf.support_patches(Pf)
    count = {}
    for s in sc_c:
        count[s] = count.get(s, 0) + 1
    pairs, violations, errs = [], [], []
    for i, j in enumerate(rep.assignment):
        if j < 0:
            violations.append({"coarse_mode": i, "reason": "no matching fine mode"})
            continue
        sub = sf_f[j] <= sf_c[i]
        same = sc_f[j] == sc_c[i]
        pairs.append({"coarse_mode": i, "fine_mode": int(j), "fine_subset": bool(sub),
                      "coarse_equal": bool(same), "error": float(rep.errors[i])})
        if not sub:
            violations.append({"coarse_mode": i, "fine_mode": int(j),
                               "reason": "fine support not contained in coarse support"})
        if not same:
            violations.append({"coarse_mode": i, "fine_mode": int(j),
                               "reason": "coarse-patch supports differ"})
        if count[sc_c[i]] == 1:
            errs.append(rep.errors[i])
    for j in rep.unmatched_candidates:
        violations.append({"fine_mode": int(j), "reason": "no matching coarse mode"})
    return ConsistencyReport(pairs, violations, float(max(errs, default=0.0)), rep)


@dataclass
class NoiseSlopeReport:
    slope: float
    intercept: float
    eps: list
    err_2: list
    err_inf: list
    supports_equal: list
    failures: dict

    def to_dict(self):
        return dict(self.__dict__)


def noise_slope(fixture, P, eps_list, seeds=(0,), opts=None, support_check=True):
    """Fit the log-log slope of ``Err_2`` against the noise level.

    For each ``eps`` and seed, ``ismd_threshold`` is run on the noisy matrix
    and its modes are matched with the clean ground truth. Errors are
    averaged over seeds before the fit. ``eps = 0`` entries are reported but
    not fitted; levels at which threshold learning fails are listed in
    ``failures`` and excluded.
    """
    from .core import ismd_threshold
    from .synth import add_noise

    eps_list = [float(e) for e in eps_list]
    if len([e for e in eps_list if e > 0]) < 2:
        raise ValidationError("noise_slope needs at least two positive noise levels")
    truth = fixture.modes
    clean_support = truth.support_patches(P)
    e2, einf, supp, failures, used = [], [], [], {}, []
    for eps in eps_list:
        vals2, valsi, same = [], [], True
        try:
            for s in seeds:
                Ah = add_noise(fixture.A, eps, seed=s)
                res = ismd_threshold(Ah, P, opts)
                rep = match_modes(res.modes, truth)
                vals2.append(rep.err_2)
                valsi.append(rep.err_inf)
                if support_check:
                    got = res.modes.support_patches(P)
                    ok = res.rank == truth.K and all(
                        j >= 0 and got[j] == clean_support[i] for i, j in enumerate(rep.assignment))
                    same = same and ok
        except GapNotFoundError as exc:
            failures[eps] = str(exc)
            continue
        e2.append(float(np.mean(vals2)))
        einf.append(float(np.mean(valsi)))
        supp.append(bool(same))
        used.append(eps)
    x = np.array([e for e in used if e > 0])
    y = np.array([v for e, v in zip(used, e2) if e > 0])
    if x.size < 2:
        raise ValidationError("fewer than two usable noise levels for the fit")
    slope, intercept = np.polyfit(np.log10(x), np.log10(y), 1)
    return NoiseSlopeReport(float(slope), float(intercept), used, e2, einf, supp, failures)


STAGES = ("local_eig", "joint_diag", "patchup")


def timing_profile(A, partitions, opts=None, repeats=1, workers=None):
    """Wall-clock time of each stage of :func:`ismd` for several partitions.

    ``t_local_eig`` covers the local eigendecompositions plus the assembly of
    ``Lambda``. Each row reports medians over ``repeats`` runs and keeps the
    raw samples.
    """
    from .core import ISMDOptions, ismd

    opts = opts or ISMDOptions()
    if workers is not None:
        opts = opts.replace(workers=int(workers))
    opts = opts.replace(compute_residual=False)
    rows = []
    for P in partitions:
        samples = []
        for _ in range(int(repeats)):
            t0 = time.perf_counter()
            res = ismd(A, P, opts)
            total = time.perf_counter() - t0
            t = res.provenance["timings"]
            samples.append({
                "t_local_eig": t["local_eig"] + t["assemble_lambda"],
                "t_joint_diag": t["joint_diag"],
                "t_patchup": t["patchup"],
                "t_total": total,
            })
        row = {"partition_label": P.label or f"M={P.M}", "M": P.M, "workers": opts.workers,
               "rank": res.rank}
        for key in ("t_local_eig", "t_joint_diag", "t_patchup", "t_total"):
            row[key] = float(np.median([s[key] for s in samples]))
        row["samples"] = samples
        rows.append(row)
    return rows
