"""Command-line front end: ``ismd generate | decompose | evaluate | bench``.

Exit codes: 0 success, 2 input error, 3 algorithmic failure, 4 internal
error. ``ISMD_LOG`` (error, info, debug) sets the log level on stderr.
"""
import argparse
import logging
import os
import sys
import time

import numpy as np
import scipy.linalg

from . import io
from .core import NOISY_TRUNC_TOL, ISMDOptions, assemble_lambda, ismd, ismd_lowrank, \
    ismd_threshold, local_bases
from .diagnostics import (integer_spectrum_test, match_modes, reconstruction_error,
                          support_consistency_report, timing_profile)
from .errors import ISMDError, ValidationError
from .linalg import pivoted_cholesky
from .partition import ModeSet, is_refinement
from .synth import FeatureConfig, gen_exponential_kernel, gen_global_plus_local, \
    gen_localized_field

log = logging.getLogger("ismd")

ALGORITHMS = {"ismd": ismd, "threshold": ismd_threshold, "lowrank": ismd_lowrank}
CHECKS = ("match", "residual", "integer-spectrum", "consistency")
TIMING_COLUMNS = ("partition_label", "M", "t_local_eig", "t_joint_diag", "t_patchup", "t_total",
                  "workers")


def _setup_logging():
    level = os.environ.get("ISMD_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if level not in levels:
        level = "error"
    logging.basicConfig(level=levels[level], stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def _outdir(path):
    os.makedirs(path, exist_ok=True)
    return path


def _config(path):
    if path is None:
        return {}
    d = io.read_json(path)
    if not isinstance(d, dict):
        raise ValidationError(f"config {path} must hold a JSON object")
    return d


# -- generate ---------------------------------------------------------------

def cmd_generate(args):
    cfg = _config(args.config)
    out = _outdir(args.out)
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    if args.subtype == "kernel":
        unknown = set(cfg) - {"n", "l", "domain", "seed"}
        if unknown:
            raise ValidationError(f"unknown kernel config key(s): {sorted(unknown)}")
        n = int(cfg.get("n", 1024))
        ell = float(cfg.get("l", 1.0 / 16))
        dom = tuple(float(v) for v in cfg.get("domain", (-1.0, 1.0)))
        A = gen_exponential_kernel(n, ell, dom)
        io.write_matrix(os.path.join(out, "A.mtx"), A, symmetric=True)
        meta = {"kind": "kernel", "n": n, "l": ell, "domain": list(dom)}
    else:
        unknown = set(cfg) - {"grid", "features", "seed"}
        if unknown:
            raise ValidationError(f"unknown fixture config key(s): {sorted(unknown)}")
        grid = tuple(int(g) for g in cfg.get("grid", (48, 48)))
        feats = FeatureConfig.from_dict(cfg.get("features", {}))
        gen = gen_localized_field if args.subtype == "localized" else gen_global_plus_local
        fx = gen(grid, feats, seed=seed)
        io.write_matrix(os.path.join(out, "A.mtx"), fx.A, symmetric=True)
        io.write_matrix(os.path.join(out, "truth.mtx"), fx.G, symmetric=False)
        meta = dict(fx.meta)
        meta["K"] = fx.K
    meta["seed"] = seed
    meta["subtype"] = args.subtype
    io.write_json(os.path.join(out, "meta.json"), meta)
    print(f"wrote {args.subtype} fixture to {out}")
    return 0


# -- decompose --------------------------------------------------------------

def _options(args, algorithm):
    d = _config(args.config)
    if args.tol is not None:
        d["local_tol" if algorithm == "lowrank" else "trunc_tol"] = args.tol
    elif algorithm == "threshold":
        d.setdefault("trunc_tol", NOISY_TRUNC_TOL)
    if args.threshold is not None:
        d["threshold"] = args.threshold if args.threshold == "auto" else float(args.threshold)
    elif algorithm == "threshold":
        d.setdefault("threshold", "auto")
    for key in ("snap", "normalize"):
        if getattr(args, key):
            d[key] = True
    if args.rank is not None:
        d["rank"] = args.rank
    if args.error_target is not None:
        d["error_target"] = args.error_target
    d["workers"] = args.workers or os.cpu_count() or 1
    return ISMDOptions.from_dict(d)


def cmd_decompose(args):
    out = _outdir(args.out)
    res_path = os.path.join(out, "result.json")
    record = {"algorithm": args.algorithm, "input": {"matrix": args.matrix,
                                                      "partition": args.partition}}
    try:
        A = io.read_matrix(args.matrix)
        P = io.parse_partition(args.partition)
        opts = _options(args, args.algorithm)
        res = ALGORITHMS[args.algorithm](A, P, opts)
    except ISMDError as exc:
        record.update(status="error", error={"code": exc.code, "type": type(exc).__name__,
                                             "message": str(exc)})
        if getattr(exc, "best_residual", None) is not None:
            record["error"]["best_residual"] = float(exc.best_residual)
        io.write_json(res_path, record)
        raise
    io.write_matrix(os.path.join(out, "modes.mtx"), res.G, symmetric=False)
    io.write_json(os.path.join(out, "partition.json"), P.to_dict())
    record.update(status="ok", **res.summary())
    io.write_json(res_path, record)
    print(f"{args.algorithm}: {res.rank} modes, residual {res.residual:.3e}, "
          f"total sparseness {int(np.sum(res.sparseness))}")
    return 0


# -- evaluate ---------------------------------------------------------------

def _load_result(d):
    rec = io.read_json(os.path.join(d, "result.json"))
    if rec.get("status") != "ok":
        raise ValidationError(f"{d} holds a failed run")
    G = io.read_matrix(os.path.join(d, "modes.mtx"))
    P = io.parse_partition(os.path.join(d, "partition.json"))
    P.label = rec.get("partition") or P.label
    return rec, ModeSet(G), P


def cmd_evaluate(args):
    checks = [c.strip() for c in args.checks.split(",") if c.strip()]
    bad = set(checks) - set(CHECKS)
    if bad:
        raise ValidationError(f"unknown check(s) {sorted(bad)}; choose from {CHECKS}")
    rec, modes, P = _load_result(args.result)
    report = {"result": args.result, "checks": {}}
    A = None
    if "residual" in checks or "integer-spectrum" in checks:
        A = io.read_matrix(args.matrix or rec["input"]["matrix"])
        if A.shape[0] != modes.n:
            raise ValidationError(f"matrix size {A.shape[0]} does not match modes ({modes.n})")
    if "match" in checks:
        if not args.truth:
            raise ValidationError("the match check needs --truth")
        T = io.read_matrix(args.truth)
        if T.shape[0] != modes.n:
            raise ValidationError(f"truth has {T.shape[0]} rows, modes have {modes.n}")
        rep = match_modes(modes, T)
        ok = modes.K == T.shape[1] and not rep.unmatched_truth and rep.err_inf <= args.bound
        report["checks"]["match"] = {"passed": bool(ok), "bound": args.bound, **rep.to_dict()}
    if "residual" in checks:
        r = reconstruction_error(A, modes)
        target = (rec.get("options") or {}).get("error_target")
        bound = max(args.bound, target) if target else args.bound
        report["checks"]["residual"] = {"passed": bool(r <= bound), "residual": r, "bound": bound}
    if "integer-spectrum" in checks:
        trunc = (rec.get("options") or {}).get("trunc_tol", 1e-12)
        bases = local_bases(A, P, trunc_tol=trunc)
        ok, w, dev = integer_spectrum_test(assemble_lambda(A, P, bases))
        report["checks"]["integer-spectrum"] = {"passed": ok, "max_deviation": dev,
                                                "eigenvalues": w}
    if "consistency" in checks:
        if not args.other:
            raise ValidationError("the consistency check needs --other RESULT_DIR")
        rec2, modes2, P2 = _load_result(args.other)
        if P2.n != P.n:
            raise ValidationError("the two results live on different index sets")
        if is_refinement(P2, P):
            coarse, fine = (modes, P), (modes2, P2)
        elif is_refinement(P, P2):
            coarse, fine = (modes2, P2), (modes, P)
        else:
            raise ValidationError("neither partition refines the other")
        rep = support_consistency_report(coarse[0], fine[0], coarse[1], fine[1])
        report["checks"]["consistency"] = {"passed": rep.consistent, **rep.to_dict()}
    report["passed"] = all(c["passed"] for c in report["checks"].values())
    out = _outdir(args.out or args.result)
    io.write_json(os.path.join(out, "report.json"), report)
    for name, c in report["checks"].items():
        print(f"{name}: {'PASS' if c['passed'] else 'FAIL'}")
    return 3 if args.strict and not report["passed"] else 0


# -- bench ------------------------------------------------------------------

def _timed(fn, repeats):
    ts = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t0)
    return float(np.median(ts)), ts


def cmd_bench(args):
    A = io.read_matrix(args.matrix)
    parts = [io.parse_partition(s) for s in args.partition]
    if not parts:
        raise ValidationError("bench needs at least one --partition")
    opts = _options(args, "ismd").replace(compute_residual=False)
    rows = timing_profile(A, parts, opts, repeats=args.repeats)
    out = _outdir(args.out)
    io.write_csv(os.path.join(out, "timing.csv"), rows, TIMING_COLUMNS)
    t_eig, s_eig = _timed(lambda: scipy.linalg.eigh(A), args.repeats)
    t_chol, s_chol = _timed(lambda: pivoted_cholesky(A, check=False), args.repeats)
    summary = {"n": int(A.shape[0]), "repeats": args.repeats, "workers": opts.workers,
               "rows": rows,
               "baselines": {"full_eigendecomposition": {"t_median": t_eig, "samples": s_eig},
                             "pivoted_cholesky": {"t_median": t_chol, "samples": s_chol}}}
    io.write_json(os.path.join(out, "bench.json"), summary)
    for r in rows:
        print(f"{r['partition_label']:>16}  M={r['M']:<5d} total {r['t_total']:.3f}s")
    print(f"{'eigh':>16}  {t_eig:.3f}s   pivoted Cholesky {t_chol:.3f}s")
    return 0


# -- entry point ------------------------------------------------------------

def _add_opts(p):
    p.add_argument("--config", help="JSON file with ISMDOptions fields")
    p.add_argument("--tol", type=float, help="local truncation (trunc_tol; local_tol for lowrank)")
    p.add_argument("--threshold", help="entry threshold for Omega, a number or 'auto'")
    p.add_argument("--snap", action="store_true", help="snap surviving entries to +-1")
    p.add_argument("--normalize", action="store_true", help="normalize local pieces")
    p.add_argument("--rank", type=int, help="rank cap (lowrank)")
    p.add_argument("--error-target", type=float, help="relative spectral error target (lowrank)")
    p.add_argument("--workers", type=int, help="threads for per-patch stages (default: all cores)")


def build_parser():
    ap = argparse.ArgumentParser(prog="ismd", description="Intrinsic sparse mode decomposition")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic fixture")
    g.add_argument("subtype", choices=("localized", "global", "kernel"))
    g.add_argument("--config", help="fixture config JSON")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    d = sub.add_parser("decompose", help="decompose a Matrix Market matrix")
    d.add_argument("matrix")
    d.add_argument("--algorithm", choices=tuple(ALGORITHMS), default="ismd")
    d.add_argument("--partition", required=True, help="grid:NXxNY/PXxPY or partition JSON")
    _add_opts(d)
    d.add_argument("--seed", type=int, help="accepted for symmetry; decomposition is deterministic")
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_decompose)

    e = sub.add_parser("evaluate", help="check a decomposition result")
    e.add_argument("result", help="directory written by decompose")
    e.add_argument("--truth", help="Matrix Market file with reference modes")
    e.add_argument("--other", help="second result directory (consistency check)")
    e.add_argument("--matrix", help="override the input matrix recorded in result.json")
    e.add_argument("--checks", default="match,residual")
    e.add_argument("--bound", type=float, default=1e-8)
    e.add_argument("--strict", action="store_true", help="exit 3 when a check fails")
    e.add_argument("--out")
    e.set_defaults(func=cmd_evaluate)

    b = sub.add_parser("bench", help="stage timings over several partitions")
    b.add_argument("matrix")
    b.add_argument("--partition", action="append", default=[],
                   help="repeat for each partition")
    b.add_argument("--repeats", type=int, default=1)
    _add_opts(b)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_bench)
    return ap


def main(argv=None):
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    try:
        return args.func(args)
    except ISMDError as exc:
        print(f"error [{exc.code}]: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, ValueError) as exc:
        print(f"error [invalid-input]: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"error [internal-error]: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
