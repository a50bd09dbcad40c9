"""Command-line entry point: bounds tables, grid oracle checks, chain runs,
parameter sweeps and a fast self-check.

Exit codes: 0 ok, 1 selfcheck failure, 2 config error, 3 inapplicable bound
in strict mode, 4 numerical failure (including NaN/Inf in any output).
"""

import argparse
import concurrent.futures as cf
import copy
import datetime
import difflib
import hashlib
import io
import json
import math
import sys
import time
from importlib import resources

import numpy as np

from . import __version__, bounds, linalg, oracle
from .errors import (ConfigError, InapplicableError, NotSPDError, NumericalFailure,
                     UnsupportedError, UsageError)
from .estimators import summarize
from .gaussian_target import target_from_spec
from .kernels import MalaConfig, density_view, kernels_from_spec
from .rng import derive_stream
from .scans import ScanSchedule, parse_functional, run_chain

EXIT_OK, EXIT_SELFCHECK, EXIT_CONFIG, EXIT_INAPPLICABLE, EXIT_NUMERIC = 0, 1, 2, 3, 4
DEFAULT_SEED = 20240101
SWEEP_STREAM_SHIFT = 32  # stream id of replica r at sweep point i: (i << 32) | r


class StrictModeViolation(Exception):
    pass


# --- config --------------------------------------------------------------------

def load_schema():
    return json.loads(resources.files("cwgap").joinpath("config.schema.json").read_text())


def _resolve(schema, root):
    while "$ref" in schema:
        ref = schema["$ref"].split("/")[1:]
        node = root
        for part in ref:
            node = node[part]
        schema = node
    return schema


def _unknown_keys(obj, schema, root, path, out):
    schema = _resolve(schema, root)
    if not isinstance(obj, dict) or "properties" not in schema:
        return
    props = schema["properties"]
    for key, val in obj.items():
        where = ".".join(path + [key])
        if key not in props:
            if schema.get("additionalProperties", True) is False:
                near = difflib.get_close_matches(key, list(props), n=1, cutoff=0.5)
                hint = f" (did you mean '{near[0]}'?)" if near else ""
                out.append(f"{where}: unknown key '{key}'{hint}")
        else:
            _unknown_keys(val, props[key], root, path + [key], out)


def validate_config(cfg):
    """Return the list of all validation problems (empty when valid)."""
    import jsonschema

    schema = load_schema()
    errors = []
    if not isinstance(cfg, dict):
        return ["config must be a JSON object"]
    _unknown_keys(cfg, schema, schema, [], errors)
    validator = jsonschema.Draft202012Validator(schema)
    for e in sorted(validator.iter_errors(cfg), key=lambda e: list(map(str, e.absolute_path))):
        if e.validator == "additionalProperties":
            continue
        where = ".".join(str(p) for p in e.absolute_path) or "<root>"
        errors.append(f"{where}: {e.message}")
    if not errors and "target" in cfg:
        try:
            target_from_spec(cfg["target"])
        except (ConfigError, KeyError, UsageError) as e:
            errors.append(f"target: {e}")
    return errors


def parse_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    errors = validate_config(cfg)
    if errors:
        raise ConfigError("invalid config:\n  " + "\n  ".join(errors))
    return cfg


def config_hash(cfg):
    """Digest of the key-sorted config; the worker count does not affect results and is left out."""
    cfg = {k: v for k, v in cfg.items() if k != "workers"}
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


# --- output ------------------------------------------------------------------------

def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        if not math.isfinite(v):
            raise NumericalFailure("non-finite number in output")
        return "%.17g" % float(v)
    return str(v)


def render_csv(columns, rows):
    buf = io.StringIO()
    buf.write(",".join(columns) + "\n")
    for r in rows:
        cells = []
        for c in columns:
            s = _fmt(r.get(c))
            if any(ch in s for ch in ',"\n'):
                s = '"' + s.replace('"', '""') + '"'
            cells.append(s)
        buf.write(",".join(cells) + "\n")
    return buf.getvalue()


def render_json(columns, rows):
    for r in rows:
        for c in columns:
            _fmt(r.get(c))  # finiteness check
    out = [{c: r.get(c) for c in columns} for r in rows]
    return json.dumps(out, sort_keys=True, indent=1) + "\n"


def _sort_rows(rows, keys):
    return sorted(rows, key=lambda r: tuple(r.get(k) if r.get(k) is not None else "" for k in keys))


# --- command helpers -------------------------------------------------------------------

def _mala_config(t, kspec):
    steps = kspec.get("step_sizes", "recommended")
    if steps == "recommended":
        steps = [bounds.recommended_step_size(t, j) for j in range(t.d)]
    steps = list(np.atleast_1d(steps))
    if len(steps) == 1:
        steps = steps * t.d
    cfg = MalaConfig(tuple(steps))
    cfg.check_target(t)
    return cfg


def _report_row(r, **extra):
    row = {"formula_id": r.formula_id,
           "value": r.value if math.isfinite(r.value) else None,
           "applicable": r.applicable,
           "preconditions": ";".join(f"{n}={int(ok)}" for n, ok in r.preconditions),
           "inputs": json.dumps(r.inputs, sort_keys=True, separators=(",", ":"))}
    row.update(extra)
    return row


BOUNDS_COLUMNS = ["formula_id", "value", "applicable", "preconditions", "inputs"]


def cmd_bounds(cfg, seed, stream_base=0):
    t = target_from_spec(cfg["target"])
    kspec = cfg.get("kernel", {"kind": "gibbs"})
    reports = [bounds.gap_rsg_gaussian(t)]
    eta = reports[0].value
    if kspec["kind"] == "mala":
        mcfg = _mala_config(t, kspec)
        blocks = [bounds.lambda_mala_block(t, mcfg, j) for j in range(t.d)]
        reports += blocks
        reports.append(bounds.gaussian_mala_dcw_bound(t, mcfg))
        lams = [r.value for r in blocks]
    elif kspec["kind"] == "gibbs":
        lams = [0.0] * t.d
    else:
        raise ConfigError(f"bounds need a gibbs or mala kernel, got {kspec['kind']!r}")
    l0 = max(lams)
    if 0.0 <= eta <= 1.0:
        for method in ("composed", "direct"):
            reports.append(bounds.gap_dcw_from_rsg(eta, lams, t.d, method))
        reports += list(bounds.sandwich_rcw_rsg(eta, l0))
        cor = reports[-3]
        if t.d >= 2 and cor.value > 0:
            reports.append(bounds.gap_rcw_from_dcw(min(cor.value, 1.0), l0, t.d, "all"))
    spec = cfg["target"]
    if spec["kind"] in ("cs", "ar1") and t.blocks.equal_size and (spec["kind"] == "ar1" or t.d >= 2):
        param = spec["zeta"] if spec["kind"] == "cs" else spec["phi"]
        reports.append(bounds.structured_target_report(spec["kind"], t.N, t.blocks.sizes[0], t.d, param))
    rows = [_report_row(r) for r in reports]
    if cfg.get("strict") and any(not r.applicable for r in reports):
        bad = [r.formula_id for r in reports if not r.applicable]
        return BOUNDS_COLUMNS, rows, ["formula_id", "inputs"], {"strict_violations": bad}
    return BOUNDS_COLUMNS, rows, ["formula_id", "inputs"], {}


ORACLE_COLUMNS = ["quantity", "grid_value", "bound_value", "slack"]
RSG_MATCH_TOL = 1e-3


def cmd_oracle(cfg, seed, stream_base=0):
    t = target_from_spec(cfg["target"])
    if t.blocks.sizes != (1, 1):
        raise UnsupportedError("the oracle command needs a 2-D target with two scalar blocks")
    ospec = cfg.get("oracle", {})
    L = float(ospec.get("L", 8.0))
    n = int(ospec.get("n", 101))
    sd = np.sqrt(np.diag(t.covariance()))
    grid = oracle.Grid(tuple(L * sd), (n, n), tuple(t.mu))
    kspec = cfg.get("kernel", {"kind": "gibbs"})
    kind = kspec["kind"]
    mcfg = _mala_config(t, kspec) if kind == "mala" else None
    if kind not in ("gibbs", "mala"):
        raise UnsupportedError(f"oracle supports gibbs and mala kernels, got {kind!r}")
    ks, ps, _ = oracle.gaussian_grid_blocks(t, grid, kind, mcfg.step_sizes if mcfg else None)
    lam = [k.deviation_norm() for k in ks]
    l0 = max(lam)
    rsg = oracle.spectral_gap(oracle.mixture(ps, [0.5, 0.5]))
    rcw_k = oracle.mixture(ks, [0.5, 0.5])
    dcw_k = oracle.compose(ks)
    rcw = oracle.spectral_gap(rcw_k)
    dcw = oracle.spectral_gap(dcw_k)
    rows = []

    def lower(q, grid_value, bound_value):
        rows.append({"quantity": q, "grid_value": grid_value, "bound_value": bound_value,
                     "slack": grid_value - bound_value})

    def upper(q, grid_value, bound_value):
        rows.append({"quantity": q, "grid_value": grid_value, "bound_value": bound_value,
                     "slack": bound_value - grid_value})

    for j in range(2):
        if kind == "gibbs":
            upper(f"block_{j}_contraction", lam[j], 0.0)
        else:
            r = bounds.lambda_mala_block(t, mcfg, j)
            if r.applicable:
                upper(f"block_{j}_contraction", lam[j], r.value)
    closed = bounds.gap_rsg_gaussian(t).value
    rows.append({"quantity": "rsg_gap_match", "grid_value": rsg, "bound_value": closed,
                 "slack": RSG_MATCH_TOL - abs(rsg - closed)})
    lo, hi = bounds.sandwich_rcw_rsg(rsg, l0)
    lower("rcw_gap_sandwich_lower", rcw, lo.value)
    upper("rcw_gap_sandwich_upper", rcw, hi.value)
    if 0 < rcw <= 1 and l0 < 1:
        lower("dcw_gap_from_rcw", dcw, bounds.gap_dcw_from_rcw(rcw, l0, 2).value)
    if 0 < rsg <= 1 and l0 < 1:
        for method in ("composed", "direct"):
            lower(f"dcw_gap_from_rsg_{method}", dcw, bounds.gap_dcw_from_rsg(rsg, lam, 2, method).value)
    if mcfg is not None:
        r = bounds.gaussian_mala_dcw_bound(t, mcfg)
        if r.applicable:
            lower("dcw_gap_gaussian_mala", dcw, r.value)
    if n * n <= linalg.MAX_DIM:
        X = grid.states
        rcw_d = oracle.power(rcw_k.to_dense(), 2)
        dcw_d = dcw_k.to_dense()
        for name in ospec.get("variance_functionals", ["x0", "x1", "x0^2", "x0*x1"]):
            f = parse_functional(name)
            fv = np.array([f(x) for x in X])
            fbar = fv - dcw_d.pi @ fv
            v_d = oracle.asymptotic_variance_exact(dcw_d, fv, gap=dcw)
            v_r = oracle.asymptotic_variance_exact(rcw_d, fv)
            b = bounds.variance_gap_bound(rcw, dcw, oracle.pi_inner(fbar, fbar, dcw_d.pi))
            upper(f"variance_gap:{name}", abs(v_d - v_r), b.value)
    return ORACLE_COLUMNS, rows, ["quantity"], {"grid": {"L": L, "n": n}}


CHAIN_COLUMNS = ["replica", "functional_id", "n", "sigma2_hat", "se", "ess", "gap_fit", "flags",
                 "acceptance_rate"]


def _run_replica(args):
    cfg, seed, stream_id, replica = args
    t = target_from_spec(cfg["target"])
    kspec = dict(cfg.get("kernel", {"kind": "gibbs"}))
    if kspec["kind"] == "mala":
        kspec["step_sizes"] = list(_mala_config(t, kspec).step_sizes)
    kernels = kernels_from_spec(kspec, t)
    sched = ScanSchedule.from_spec(cfg.get("scan", {"kind": "deterministic"}), t.d)
    funcs = cfg.get("functionals", [f"x{i}" for i in range(t.N)])
    n = int(cfg.get("n_steps", 10000))
    burn = int(cfg.get("burn_in", 0))
    rng = derive_stream(seed, stream_id)
    run = run_chain(t, kernels, sched, n, burn, funcs, rng)
    prop = int(run.stats.proposed.sum())
    rate = float(run.stats.accepted.sum()) / prop if prop else None
    rows = []
    for k, name in enumerate(run.functional_names):
        row = summarize(name, run.samples[:, k])
        row["replica"] = replica
        row["acceptance_rate"] = rate
        rows.append(row)
    return replica, stream_id, rows


def _pool_map(fn, jobs, workers):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with cf.ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, jobs))


def cmd_chain(cfg, seed, stream_base=0):
    R = int(cfg.get("replicas", 1))
    jobs = [(cfg, seed, stream_base | r, r) for r in range(R)]
    results = _pool_map(_run_replica, jobs, int(cfg.get("workers", 1)))
    results.sort(key=lambda x: x[0])
    rows = [row for _, _, rs in results for row in rs]
    return CHAIN_COLUMNS, rows, ["replica", "functional_id"], {"stream_ids": [s for _, s, _ in results]}


COMMANDS = {"bounds": cmd_bounds, "oracle": cmd_oracle, "chain": cmd_chain}


def _set_path(cfg, path, value):
    keys = path.split(".")
    node = cfg
    for k in keys[:-1]:
        node = node.setdefault(k, {})
    node[keys[-1]] = value


def _sweep_point(args):
    cfg, seed, i, value = args
    inner = cfg["sweep"].get("command", "bounds")
    point = copy.deepcopy(cfg)
    del point["sweep"]
    point["command"] = inner
    _set_path(point, cfg["sweep"]["parameter"], value)
    errs = validate_config(point)
    if errs:
        raise ConfigError(f"sweep point {i}: " + "; ".join(errs))
    point["workers"] = 1
    cols, rows, keys, extra = COMMANDS[inner](point, seed, i << SWEEP_STREAM_SHIFT)
    vstr = json.dumps(value, sort_keys=True, separators=(",", ":"))
    for r in rows:
        r["point"] = i
        r["parameter"] = cfg["sweep"]["parameter"]
        r["parameter_value"] = vstr
    return i, cols, rows, keys, extra


def cmd_sweep(cfg, seed, stream_base=0):
    values = cfg["sweep"]["values"]
    jobs = [(cfg, seed, i, v) for i, v in enumerate(values)]
    results = _pool_map(_sweep_point, jobs, int(cfg.get("workers", 1)))
    results.sort(key=lambda x: x[0])
    cols = ["point", "parameter", "parameter_value"] + results[0][1]
    keys = ["point"] + results[0][3]
    rows = [r for res in results for r in res[2]]
    extra = {"points": [res[4] for res in results]}
    bad = [v for res in results for v in res[4].get("strict_violations", [])]
    if bad:
        extra["strict_violations"] = bad
    return cols, rows, keys, extra


COMMANDS["sweep"] = cmd_sweep


def execute(cfg, seed=None, out_dir=None, fmt="csv", stdout=None):
    """Run the configured command; write outputs and a manifest. Returns an exit code."""
    stdout = stdout or sys.stdout
    command = cfg.get("command")
    if command not in COMMANDS:
        raise ConfigError(f"unknown or missing command {command!r}")
    seed = int(cfg.get("seed", DEFAULT_SEED) if seed is None else seed)
    cfg = dict(cfg)
    cfg["seed"] = seed
    started = datetime.datetime.now(datetime.timezone.utc).isoformat()
    t0 = time.perf_counter()
    cols, rows, keys, extra = COMMANDS[command](cfg, seed)
    rows = _sort_rows(rows, keys)
    fmt = fmt or cfg.get("output", {}).get("format", "csv")
    text = render_csv(cols, rows) if fmt == "csv" else render_json(cols, rows)
    out_dir = out_dir or cfg.get("output", {}).get("dir")
    manifest = {"version": __version__, "command": command, "config_hash": config_hash(cfg),
                "root_seed": seed, "started": started,
                "finished": datetime.datetime.now(datetime.timezone.utc).isoformat(),
                "wall_time_s": time.perf_counter() - t0,
                "stream_ids": extra.get("stream_ids", [])}
    if command == "sweep":
        manifest["stream_ids"] = [p.get("stream_ids", []) for p in extra["points"]]
    if out_dir:
        import os
        os.makedirs(out_dir, exist_ok=True)
        name = os.path.join(out_dir, f"{command}.{fmt}")
        with open(name, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        manifest["outputs"] = [name]
        with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8", newline="") as fh:
            json.dump(manifest, fh, sort_keys=True, indent=1)
            fh.write("\n")
    else:
        stdout.write(text)
    if extra.get("strict_violations"):
        raise StrictModeViolation(", ".join(extra["strict_violations"]))
    return EXIT_OK


# --- selfcheck ------------------------------------------------------------------------

def _check_eigen():
    cases = [(np.eye(3), [1, 1, 1]), ([[0, .5], [.5, 0]], [.5, -.5]), (np.diag([3., 1, 2]), [3, 2, 1])]
    for A, want in cases:
        if np.max(np.abs(linalg.eigen_sym(A).values - want)) > 1e-12:
            return False, f"eigenvalues of {np.asarray(A).tolist()}"
    g = np.random.default_rng(7)
    for n in (3, 8, 12):
        B = g.normal(size=(n, n))
        A = B + B.T
        w, V = linalg.eigen_sym(A, "jacobi")
        if np.max(np.abs((V * w) @ V.T - A)) > 1e-9 * np.max(np.abs(A)):
            return False, f"reconstruction n={n}"
    return True, ""


def _check_cholesky():
    L = linalg.cholesky_spd([[4.0, 2.0], [2.0, 3.0]])
    if np.max(np.abs(L - [[2, 0], [1, math.sqrt(2)]])) > 1e-14:
        return False, "factor of [[4,2],[2,3]]"
    try:
        linalg.cholesky_spd([[1.0, 2.0], [2.0, 1.0]])
    except NotSPDError:
        return True, ""
    return False, "indefinite matrix accepted"


def _check_two_norm():
    ok = (linalg.two_norm(np.zeros((3, 3))) == 0.0
          and abs(linalg.two_norm(np.diag([2.0, -3.0])) - 3) < 1e-9
          and abs(linalg.two_norm([[0.0, 1.0], [0.0, 0.0]]) - 1) < 1e-9)
    return ok, "" if ok else "known singular values"


def _check_detailed_balance():
    K = oracle.discretize_mh_1d(density_view("std_mala", delta=0.2), oracle.Grid.line(8.0, 801))
    r = K.detailed_balance_residual()
    return r <= 1e-8, f"residual {r:.3e}"


def _check_density_inequality():
    m = bounds.density_inequality_margin(np.linspace(-10, 10, 20001))
    return m >= -1e-12, f"margin {m:.3e}"


def _check_cs_closed_form():
    from .gaussian_target import cs_target
    worst = 0.0
    for N in (4, 6, 8):
        for s in [s for s in range(1, N + 1) if N % s == 0 and N // s >= 2]:
            for z in np.round(np.arange(0, 1.0, 0.1), 1):
                t = cs_target(N, s, z)
                closed = bounds.structured_target_report("cs", N, s, N // s, z).details["psi_max"]
                worst = max(worst, abs(bounds.rsg_psi_max(t) - closed))
    return worst <= 1e-10, f"max deviation {worst:.3e}"


def _check_ar1_bound():
    from .gaussian_target import ar1_target
    worst = math.inf
    for phi in [v * sgn for v in np.round(np.arange(0.1, 1.0, 0.1), 1) for sgn in (1, -1)]:
        for s in (1, 2, 3):
            for d in range(2, 6):
                t = ar1_target(s * d, phi, s)
                b = bounds.structured_target_report("ar1", s * d, s, d, phi).details["psi_max_bound"]
                worst = min(worst, b - bounds.rsg_psi_max(t))
    return worst >= -1e-12, f"min slack {worst:.3e}"


def _check_c0_chain():
    for delta in (0.05, 0.1, 0.2, 0.3):
        c = bounds.c0_constants([delta])
        if not c.epsilon > 0.1:
            return False, f"epsilon {c.epsilon} at delta={delta}"
        chain_c0 = c.one_step_gap_lb / delta
        if abs(chain_c0 - bounds.C0) > 1e-15 * chain_c0:
            return False, f"chain gives c0={chain_c0!r}, module constant {bounds.C0!r}"
    return True, ""


def _check_rsg_pair():
    from .gaussian_target import correlated_pair
    worst = max(abs(bounds.gap_rsg_gaussian(correlated_pair(r)).value - (1 - abs(r)) / 2)
                for r in (-0.9, -0.5, 0.1, 0.5, 0.9))
    return worst <= 1e-12, f"max deviation {worst:.3e}"


SELFCHECKS = [
    ("eigen_sym", _check_eigen),
    ("cholesky_spd", _check_cholesky),
    ("two_norm", _check_two_norm),
    ("detailed_balance", _check_detailed_balance),
    ("density_inequality", _check_density_inequality),
    ("cs_closed_form_vs_eigen", _check_cs_closed_form),
    ("ar1_bound_dominance", _check_ar1_bound),
    ("c0_derivation", _check_c0_chain),
    ("rsg_gap_pair", _check_rsg_pair),
]


def selfcheck(stdout=None):
    """Run every check; returns (all_ok, [(name, ok, detail), ...])."""
    stdout = stdout or sys.stdout
    results = []
    for name, fn in SELFCHECKS:
        try:
            ok, detail = fn()
        except Exception as e:  # a crash is a failure of that check
            ok, detail = False, f"{type(e).__name__}: {e}"
        results.append((name, bool(ok), detail))
        stdout.write(f"{'PASS' if ok else 'FAIL'} {name}" + (f": {detail}" if detail and not ok else "") + "\n")
    return all(ok for _, ok, _ in results), results


# --- entry point --------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="cwgap", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=["bounds", "oracle", "chain", "sweep", "selfcheck"])
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--seed", type=int, help="root seed (overrides the config)")
    p.add_argument("--out", help="output directory (default: CSV to stdout)")
    p.add_argument("--format", choices=["csv", "json"], default=None)
    p.add_argument("--strict", action="store_true", help="exit 3 if any bound is inapplicable")
    p.add_argument("--workers", type=int, help="worker processes for replicas / sweep points")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "selfcheck":
            ok, _ = selfcheck()
            return EXIT_OK if ok else EXIT_SELFCHECK
        if not args.config:
            raise ConfigError("--config is required for this command")
        cfg = parse_config(args.config)
        cfg["command"] = args.command
        if args.strict:
            cfg["strict"] = True
        if args.workers:
            cfg["workers"] = args.workers
        if args.seed is not None and not (0 <= args.seed < 2 ** 64):
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        return execute(cfg, seed=args.seed, out_dir=args.out, fmt=args.format)
    except (ConfigError, UnsupportedError) as e:
        sys.stderr.write(f"config error: {e}\n")
        return EXIT_CONFIG
    except StrictModeViolation as e:
        sys.stderr.write(f"inapplicable bound(s) in strict mode: {e}\n")
        return EXIT_INAPPLICABLE
    except InapplicableError as e:
        sys.stderr.write(f"inapplicable: {e}\n")
        return EXIT_INAPPLICABLE
    except (NumericalFailure, FloatingPointError) as e:
        sys.stderr.write(f"numerical failure: {e}\n")
        return EXIT_NUMERIC
    except UsageError as e:
        sys.stderr.write(f"config error: {e}\n")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
