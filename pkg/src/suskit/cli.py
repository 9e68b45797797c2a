"""Command-line front end for suskit: operator, branching and graph susceptibility tools.

Every subcommand prints a JSON envelope ``{command, inputs, outputs,
diagnostics, versions, seed}``; tables go to ``--out`` as CSV when given.
Numerical outcomes such as divergence are reported through status fields
and exit 0; malformed inputs exit 2 with a message naming the field.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import platform
import sys
import time

import numpy as np
import scipy

from . import __version__
from . import branching, closedform, graphs, operators
from .kernels import Kernel, parse_kernel
from .typespace import (TypeSpace, build_finite_space, build_graded_mesh, build_powerlaw_space,
                        build_uniform_mesh)


class SpecError(ValueError):
    def __init__(self, field, msg):
        super().__init__(f"invalid {field}: {msg}")
        self.field = field


def parse_mesh(spec: str) -> TypeSpace:
    """``atom``, ``uniform:m``, ``graded:m[:gamma]``, ``powerlaw:q:xmax:m`` or ``finite:w1,w2,...``."""
    name, _, rest = spec.strip().partition(":")
    parts = rest.split(":") if rest else []
    try:
        if name == "atom" and not parts:
            return build_finite_space([1.0])
        if name == "uniform" and len(parts) == 1:
            return build_uniform_mesh(int(parts[0]))
        if name == "graded" and len(parts) in (1, 2):
            return build_graded_mesh(int(parts[0]), float(parts[1]) if len(parts) == 2 else 2.0)
        if name == "powerlaw" and len(parts) == 3:
            return build_powerlaw_space(float(parts[0]), float(parts[1]), int(parts[2]))
        if name == "finite" and len(parts) == 1:
            return build_finite_space([float(v) for v in parts[0].split(",")])
    except ValueError as exc:
        raise ValueError(f"{spec!r}: {exc}") from None
    raise ValueError(f"{spec!r} is not one of atom, uniform:m, graded:m[:gamma], "
                     "powerlaw:q:xmax:m, finite:w1,w2,...")


def default_mesh(k: Kernel) -> str:
    if k.matrix is not None:
        n = k.matrix.shape[0]
        return "finite:" + ",".join([repr(1.0 / n)] * n)
    if k.name.startswith("constant"):
        return "atom"
    if k.singularity != "none":
        return "graded:2000:2"
    return "uniform:1000"


def parse_grid(spec: str) -> np.ndarray:
    """``a:b:steps`` (inclusive linspace) or a comma list."""
    if ":" in spec:
        a, b, s = spec.split(":")
        steps = int(s)
        if steps < 1:
            raise ValueError("steps must be >= 1")
        return np.linspace(float(a), float(b), steps)
    return np.array([float(v) for v in spec.split(",")])


def _json_safe(obj):
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, set)):
        return [_json_safe(v) for v in (sorted(obj) if isinstance(obj, set) else obj)]
    if isinstance(obj, np.ndarray):
        return _json_safe(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    return obj


def _versions():
    return {"suskit": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def _write_csv(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        vals = [r[h] for h in header] if isinstance(r, dict) else r
        w.writerow([_fmt(v) for v in vals])
    if path == "-":
        sys.stdout.write(buf.getvalue())
    else:
        with open(path, "w", newline="") as fh:
            fh.write(buf.getvalue())


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _kernel(args) -> Kernel:
    try:
        return parse_kernel(args.kernel)
    except ValueError as exc:
        raise SpecError("--kernel", str(exc)) from None


def _mesh(args, k: Kernel | None = None) -> TypeSpace:
    spec = args.mesh or (default_mesh(k) if k is not None else "atom")
    try:
        ts = parse_mesh(spec)
    except ValueError as exc:
        raise SpecError("--mesh", str(exc)) from None
    args.mesh = spec
    return ts


def _lam(args, name="lam"):
    lam = getattr(args, name)
    if lam is None or not lam > 0:
        raise SpecError("--lambda", f"must be positive, got {lam!r}")
    return lam


def _mesh_diag(ts: TypeSpace, op=None):
    d = {"mesh": ts.description, "mesh_size": ts.size, "total_mass": ts.total_mass}
    if op is not None:
        d["criticality_flags"] = sorted(op.criticality_flags())
    return d


# subcommands ----------------------------------------------------------------

def cmd_norm(args):
    k = _kernel(args)
    ts = _mesh(args, k)
    op = operators.discretize(k, ts)
    nrm = operators.operator_norm(op, args.tol)
    out = {"norm": nrm, "lambda_c": 1.0 / nrm if nrm > 0 else math.inf}
    return out, _mesh_diag(ts) | {"tolerances": {"norm": args.tol}}


def cmd_chi(args):
    k = _kernel(args)
    lam = _lam(args)
    ts = _mesh(args, k)
    op = operators.discretize(k, ts).scaled(lam)
    res = operators.susceptibility_series(op, tol=args.tol, j_max=args.j_max, check_critical=True)
    out = {"value": res.value if res.converged else None, "status": res.status,
           "j_stop": res.j_stop, "partial_sum": res.partial_sum, "last_ratio": res.last_ratio,
           "mesh": ts.description, "tolerances": {"series": args.tol, "j_max": args.j_max}}
    return out, _mesh_diag(ts, op) | {"flags": sorted(res.flags), "norm": op.norm()}


def cmd_chihat(args):
    k = _kernel(args)
    lam = _lam(args)
    ts = _mesh(args, k)
    op = operators.discretize(k, ts).scaled(lam)
    r = branching.modified_susceptibility(op, tol=args.tol)
    dual_crit = branching.DUAL_CRITICAL in r.flags
    out = {"chi_hat": r.chi_hat, "chi": r.chi, "rho_total": r.rho_total,
           "status": "mesh-limited" if dual_crit else "converged",
           "chi_status": "converged" if math.isfinite(r.chi) else "diverged",
           "iterations": r.iterations, "norm": r.norm, "dual_norm": r.dual_norm,
           "renormalized_dual_gap": r.lsusq_gap}
    return out, _mesh_diag(ts, op) | {"flags": sorted(r.flags),
                                      "tolerances": {"survival": args.tol}}


def cmd_rhok(args):
    k = _kernel(args)
    lam = _lam(args)
    ts = _mesh(args, k)
    op = operators.discretize(k, ts).scaled(lam)
    try:
        tab = branching.rho_k_pointwise(op, args.kmax)
    except ValueError as exc:
        raise SpecError("--kmax", str(exc)) from None
    totals = tab.totals / ts.total_mass
    rows = [(i + 1, float(t)) for i, t in enumerate(totals)]
    if args.out:
        _write_csv(args.out, ["k", "rho_k_total"], rows)
    out = {"k": [r[0] for r in rows], "rho_k_total": [r[1] for r in rows],
           "sum": float(totals.sum()), "csv": args.out}
    return out, _mesh_diag(ts, op)


def cmd_mc_bp(args):
    k = _kernel(args)
    lam = _lam(args)
    ts = _mesh(args, k)
    if args.runs < 1:
        raise SpecError("--runs", "must be >= 1")
    if args.cap < 1:
        raise SpecError("--cap", "must be >= 1")
    op = operators.discretize(k, ts).scaled(lam)
    est = branching.mc_susceptibility(op, args.runs, args.cap, args.seed)
    out = est.summary()
    out["cap_bias_flag"] = est.frac_cap_hit > 0
    return out, _mesh_diag(ts, op)


def _vertex_spec(args, ts):
    if args.vertices == "grid":
        return graphs.grid_vertices()
    if args.vertices == "iid":
        return graphs.iid_vertices(ts)
    raise SpecError("--vertices", f"expected iid or grid, got {args.vertices!r}")


def cmd_sample(args):
    k = _kernel(args)
    ts = _mesh(args, k)
    if args.n < 1:
        raise SpecError("--n", "must be >= 1")
    g = graphs.sample_graph(k, _vertex_spec(args, ts), args.n, args.lam, args.edge_rule, args.seed)
    st = graphs.components(g)
    if args.out:
        _write_csv(args.out, ["u", "v"], (g.edges + 1).tolist())
    out = {"n": g.n, "edges": g.n_edges, "chi": st.chi, "chi_hat": st.chi_hat,
           "largest": int(st.sizes[0]), "largest_root": st.largest_root + 1, "csv": args.out}
    return out, _mesh_diag(ts) | {"strategy": g.strategy, "edge_rule": g.edge_rule,
                                  "vertices": args.vertices}


SCAN_COLUMNS = ["lambda", "n", "rep_count", "mean_chi", "se_chi", "mean_chi_hat",
                "se_chi_hat", "pred_chi", "pred_chi_hat", "status"]


def cmd_scan(args):
    k = _kernel(args)
    ts = _mesh(args, k)
    try:
        grid = parse_grid(args.lambda_grid)
    except ValueError as exc:
        raise SpecError("--lambda-grid", str(exc)) from None
    if args.n < 1:
        raise SpecError("--n", "must be >= 1")
    if args.reps < 1:
        raise SpecError("--reps", "must be >= 1")
    rows = graphs.scan_susceptibility(k, _vertex_spec(args, ts), grid, args.n, args.reps,
                                      args.seed, ts, args.edge_rule)
    if args.out:
        _write_csv(args.out, SCAN_COLUMNS, rows)
    return {"rows": rows, "columns": SCAN_COLUMNS, "csv": args.out}, _mesh_diag(ts) | {
        "edge_rule": args.edge_rule, "vertices": args.vertices,
        "caveat": "fixed lambda only; lambda_n -> lambda_c sequences are not represented"}


def cmd_threshold(args):
    k = _kernel(args)
    ts = _mesh(args, k)
    if args.method not in ("norm", "solvability", "both"):
        raise SpecError("--method", f"expected norm, solvability or both, got {args.method!r}")
    op = operators.discretize(k, ts)
    out = {}
    lc_norm = operators.critical_lambda_norm(k, ts)
    if args.method in ("norm", "both"):
        out["lambda_c_norm"] = lc_norm
    if args.method in ("solvability", "both"):
        lo = args.lo if args.lo is not None else 0.5 * lc_norm
        hi = args.hi if args.hi is not None else 2.0 * lc_norm
        try:
            lc = operators.critical_lambda_solvability(op, None, lo, hi, tol=args.tol * lc_norm,
                                                       j_max=args.j_max)
        except ValueError as exc:
            raise SpecError("--lo/--hi", str(exc)) from None
        out["lambda_c_solvability"] = lc
        if args.method == "both":
            out["relative_gap"] = abs(lc - lc_norm) / lc_norm
    return out, _mesh_diag(ts) | {"tolerances": {"bisection_rel": args.tol, "j_max": args.j_max}}


def _check(rows, family, lam, name, measured, reference, tol):
    if measured is None or reference is None or not (math.isfinite(measured) and math.isfinite(reference)):
        dev = 0.0 if measured == reference else math.inf
    else:
        dev = abs(measured - reference) / max(abs(reference), 1e-300)
    rows.append({"family": family, "lambda": lam, "check": name, "measured": measured,
                 "reference": reference, "rel_deviation": dev, "tolerance": tol,
                 "pass": bool(dev <= tol)})


def _verify_family(family, grid):
    rows = []
    if family == "er":
        op = operators.discretize(parse_kernel("constant:1"), build_finite_space([1.0]))
        for lam in grid:
            o = op.scaled(lam)
            if lam < 1:
                _check(rows, family, lam, "series_chi", operators.susceptibility_series(o).value,
                       closedform.er_chi(lam), 1e-10)
            elif lam > 1:
                r = branching.modified_susceptibility(o)
                _check(rows, family, lam, "rho", r.rho_total, closedform.er_rho(lam), 1e-9)
                _check(rows, family, lam, "chi_hat", r.chi_hat, closedform.er_chi_hat(lam), 1e-8)
    elif family == "rank1":
        k = parse_kernel("rank1:psi=one_plus_x")
        ts = build_uniform_mesh(2000)
        op = operators.discretize(k, ts)
        lc = 1.0 / op.norm()
        for lam in grid:
            o = op.scaled(lam)
            if lam < lc:
                _check(rows, family, lam, "series_chi", operators.susceptibility_series(o).value,
                       closedform.rank1_chi_sub(k.moments, lam), 1e-5)
            elif lam > lc:
                r = branching.modified_susceptibility(o)
                _check(rows, family, lam, "chi_hat_b8", r.chi_hat,
                       closedform.rank1_chi_hat(k.psi, ts, lam), 1e-6)
    elif family == "chkns":
        ts = build_graded_mesh(2000, 2.0)
        op = operators.discretize(parse_kernel("chkns"), ts)
        for lam in grid:
            o = op.scaled(lam)
            if lam <= 0.2:
                _check(rows, family, lam, "series_chi", operators.susceptibility_series(o).value,
                       closedform.chkns_chi(lam), 1e-2)
            if lam >= 0.4:
                r = branching.modified_susceptibility(o)
                _check(rows, family, lam, "chi_hat", r.chi_hat, closedform.chkns_chi_hat(lam), 2e-2)
                _check(rows, family, lam, "rho_ode_vs_fixed_point", r.rho_total,
                       closedform.chkns_rho_via_ode(lam), 1e-2)
            rec = closedform.chkns_rhok_recursion(lam, 4)
            for kk in range(1, 5):
                _check(rows, family, lam, f"rho_{kk}_recursion", float(rec[kk - 1]),
                       closedform.chkns_rho_closed(lam, kk), 1e-12)
    elif family == "dubins":
        ts = build_graded_mesh(2000, 2.0)
        op = operators.discretize(parse_kernel("dubins"), ts)
        for lam in grid:
            o = op.scaled(lam)
            if lam <= 0.2:
                _check(rows, family, lam, "series_chi", operators.susceptibility_series(o).value,
                       closedform.dubins_chi(lam), 1e-2)
            tab = branching.rho_k_pointwise(o, 3)
            for kk in range(1, 4):
                _check(rows, family, lam, f"rho_{kk}", tab.total(kk),
                       closedform.dubins_rhok(lam, kk), 5e-3)
    elif family == "maxphi":
        k = parse_kernel("max:phi=one_minus_x")
        ts = build_uniform_mesh(2000)
        op = operators.discretize(k, ts)
        for lam in grid:
            r = closedform.maxkernel_chi_ode(k.phi, k.phi_derivative, lam)
            s = math.sqrt(lam)
            if lam < math.pi ** 2 / 4:
                _check(rows, family, lam, "ode_chi", r.chi, math.tan(s) / s, 1e-6)
                _check(rows, family, lam, "operator_chi",
                       operators.susceptibility_series(op.scaled(lam)).value, r.chi, 1e-3)
    else:
        raise SpecError("--family", f"expected er, rank1, chkns, dubins or maxphi, got {family!r}")
    return rows


VERIFY_COLUMNS = ["family", "lambda", "check", "measured", "reference", "rel_deviation",
                  "tolerance", "pass"]


def cmd_verify(args):
    try:
        grid = parse_grid(args.lambda_grid)
    except ValueError as exc:
        raise SpecError("--lambda-grid", str(exc)) from None
    if np.any(grid <= 0):
        raise SpecError("--lambda-grid", "values must be positive")
    rows = _verify_family(args.family, [float(v) for v in grid])
    if args.out:
        _write_csv(args.out, VERIFY_COLUMNS, rows)
    return {"rows": rows, "n_checks": len(rows), "n_failed": sum(not r["pass"] for r in rows),
            "csv": args.out}, {}


def cmd_chkns(args):
    lam = _lam(args)
    out = {"chi": closedform.chkns_chi(lam), "chi_hat": closedform.chkns_chi_hat(lam)}
    rec = closedform.chkns_rhok_recursion(lam, args.K)
    k = np.arange(1, args.K + 1, dtype=float)
    out.update({"sum_rho_k": float(rec.sum()), "sum_k_rho_k": float(k @ rec),
                "sum_k2_rho_k": float((k * k) @ rec)})
    if lam > 0.25:
        rho = closedform.chkns_rho_via_ode(lam)
        out.update({"rho_ode": rho, "rho_ode_richardson_gap":
                    closedform.richardson_gap(closedform.chkns_rho_via_ode, lam),
                    "one_minus_sum_rho_k": 1.0 - float(rec.sum()),
                    "second_moment_formula": 1.0 / (lam * rho)})
    if args.variant:
        if args.n < 1:
            raise SpecError("--n", "must be >= 1")
        try:
            st = graphs.replicate_stats(
                lambda ss: graphs.sample_chkns_family(args.variant, lam, args.n, ss),
                args.seed, args.reps)
        except ValueError as exc:
            raise SpecError("--variant", str(exc)) from None
        out["graph"] = {k2: st[k2] for k2 in ("reps", "mean_chi", "se_chi", "mean_chi_hat",
                                              "se_chi_hat")}
    return out, {"recursion_K": args.K}


# parser ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="suskit", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="key=value file; keys are long option names")
    p.add_argument("--json", dest="json_out", help="write the envelope here instead of stdout")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, *, kernel=True, lam=False, mesh=True, seed=False, help=None):
        s = sub.add_parser(name, help=help)
        s.set_defaults(func=fn)
        if kernel:
            s.add_argument("--kernel", default="constant:1")
        if mesh:
            s.add_argument("--mesh", "--space", dest="mesh", default=None)
        if lam:
            s.add_argument("--lambda", dest="lam", type=float, default=1.0)
        if seed:
            s.add_argument("--seed", type=int, default=0)
        s.add_argument("--out", default=None, help="CSV output path")
        return s

    s = add("norm", cmd_norm, help="operator norm and 1/norm")
    s.add_argument("--tol", type=float, default=1e-12)
    s = add("chi", cmd_chi, lam=True, help="susceptibility by the Neumann series")
    s.add_argument("--tol", type=float, default=1e-12)
    s.add_argument("--j-max", dest="j_max", type=int, default=100_000)
    s = add("chihat", cmd_chihat, lam=True, help="survival probability and modified susceptibility")
    s.add_argument("--tol", type=float, default=1e-13)
    s = add("rhok", cmd_rhok, lam=True, help="component-size law rho_k")
    s.add_argument("--kmax", type=int, default=10)
    s = add("mc-bp", cmd_mc_bp, lam=True, seed=True, help="Monte-Carlo branching process")
    s.set_defaults(kernel="constant:0.5")
    s.add_argument("--runs", type=int, default=100_000)
    s.add_argument("--cap", type=int, default=10 ** 6)
    for name, fn, hlp in (("sample", cmd_sample, "sample one graph"),
                          ("scan", cmd_scan, "empirical vs predicted chi over a lambda grid")):
        s = add(name, fn, lam=(name == "sample"), seed=True, help=hlp)
        s.add_argument("--n", type=int, default=1000)
        s.add_argument("--edge-rule", dest="edge_rule", choices=graphs.EDGE_RULES,
                       default=graphs.CLIP)
        s.add_argument("--vertices", default="iid")
        if name == "scan":
            s.add_argument("--lambda-grid", dest="lambda_grid", default="0.5:2.0:16")
            s.add_argument("--reps", type=int, default=20)
    s = add("threshold", cmd_threshold, help="critical lambda by norm and by solvability")
    s.add_argument("--method", default="both")
    s.add_argument("--lo", type=float, default=None)
    s.add_argument("--hi", type=float, default=None)
    s.add_argument("--tol", type=float, default=1e-4, help="relative bisection width")
    s.add_argument("--j-max", dest="j_max", type=int, default=5000)
    s = add("verify", cmd_verify, kernel=False, mesh=False, help="closed forms vs operator routes")
    s.add_argument("--family", default="er")
    s.add_argument("--lambda-grid", dest="lambda_grid", default="0.5,2")
    s = add("chkns", cmd_chkns, kernel=False, mesh=False, lam=True, seed=True,
            help="CHKNS recursion, generating-function ODE and graph variants")
    s.set_defaults(lam=0.5)
    s.add_argument("--K", type=int, default=20_000)
    s.add_argument("--variant", default=None, choices=graphs.CHKNS_VARIANTS)
    s.add_argument("--n", type=int, default=10_000)
    s.add_argument("--reps", type=int, default=20)
    return p


def load_config(path: str) -> dict:
    cfg = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise SpecError("--config", f"{path}:{lineno}: expected key=value")
            key, val = line.split("=", 1)
            cfg[key.strip().lstrip("-").replace("-", "_")] = val.strip()
    return cfg


_KEY_ALIASES = {"lambda": "lam", "space": "mesh"}


def _apply_config(parser, argv, cfg):
    sub_action = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    cmd = next((a for a in argv if a in sub_action.choices), None)
    if cmd is None:
        return
    sp = sub_action.choices[cmd]
    dests = {a.dest: a for a in sp._actions}
    defaults = {}
    for key, val in cfg.items():
        key = _KEY_ALIASES.get(key, key)
        if key not in dests:
            raise SpecError("--config", f"unknown key {key!r} for {cmd}")
        act = dests[key]
        try:
            defaults[key] = act.type(val) if act.type else val
        except ValueError:
            raise SpecError("--config", f"bad value {val!r} for {key!r}") from None
    sp.set_defaults(**defaults)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        cfg_path = None
        for i, a in enumerate(argv):
            if a == "--config" and i + 1 < len(argv):
                cfg_path = argv[i + 1]
            elif a.startswith("--config="):
                cfg_path = a.split("=", 1)[1]
        if cfg_path:
            try:
                cfg = load_config(cfg_path)
            except OSError as exc:
                raise SpecError("--config", str(exc)) from None
            _apply_config(parser, argv, cfg)
        args = parser.parse_args(argv)
        t0 = time.perf_counter()
        outputs, diagnostics = args.func(args)
    except SpecError as exc:
        print(f"suskit: error: {exc}", file=sys.stderr)
        return 2
    diagnostics = dict(diagnostics)
    diagnostics["runtime_s"] = time.perf_counter() - t0
    inputs = {k: v for k, v in vars(args).items() if k not in ("func", "json_out", "config")}
    envelope = {"command": args.command, "inputs": inputs, "outputs": outputs,
                "diagnostics": diagnostics, "versions": _versions(),
                "seed": getattr(args, "seed", None)}
    text = json.dumps(_json_safe(envelope), indent=2)
    if args.json_out:
        with open(args.json_out, "w") as fh:
            fh.write(text + "\n")
    elif args.out == "-":
        # the CSV already went to stdout
        sys.stderr.write(text + "\n")
    else:
        sys.stdout.write(text + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
