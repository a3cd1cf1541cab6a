"""Command-line front end: stages, configuration, artifact bookkeeping.

Each stage writes into one output directory: CSV for plot-ready tables,
JSON for reports, and a shared manifest listing every artifact with its
content hash.  Reports are serialized with sorted keys and a fixed
reduction order, so a rerun with the same configuration and seed
reproduces every file byte for byte.  Existing artifacts are never
overwritten unless the run is forced; the manifest itself is
bookkeeping and is always rewritten.

Exit codes: 0 on success (an unstable verdict is a result, not a
failure), 1 on operational errors (bad input, missing or corrupt
files, non-convergence), 2 when a verification check fails.

Heavy imports happen inside the stage functions so the thread count
can be pinned into the environment first.
"""

import argparse
import hashlib
import json
import math
import os
import sys
from pathlib import Path

THREADS_ENV = "FRACSADDLE_THREADS"

_THREAD_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)

DEFAULTS = {
    "seed": 0,
    "problem.m": 7,
    "problem.gamma": 0.5,
    "problem.model": "cubic",
    "problem.d_gamma": "",
    "layer.L": 50.0,
    "layer.N": 1000,
    "layer.tol": 1e-4,
    "grid.S": 16.0,
    "grid.Lambda": 16.0,
    "grid.ns": 96,
    "grid.nl": 32,
    "grid.p": "",
    "solver.tol": 1e-6,
    "solver.init": "barrier",
    "solver.pad": 12.0,
    "verify.b": 2.5,
    "verify.sign_tol": 5e-3,
    "verify.barrier_tol": 1e-6,
    "verify.radii": "",
    "stability.maxiter": 200,
    "stability.tol": "",
    "stability.method": "lanczos",
    "stability.deflate": "true",
    "stability.eps": "4.0,2.0,1.0",
    "geometry.samples": 200000,
    "geometry.ratio_dims": "2,7",
    "geometry.ratio_points": 3,
    "geometry.slab_eps": 0.1,
    "geometry.theta": 0.5,
}

_STAGE_TOL_KEY = {
    "layer": "layer.tol",
    "saddle": "solver.tol",
    "pipeline": "solver.tol",
    "verify": "verify.sign_tol",
    "stability": "stability.tol",
}


class StageError(Exception):
    """Operational failure: maps to exit code 1."""


class RunConfig:
    """Flat key-value configuration with dotted keys.

    Precedence: built-in defaults, then the config file, then explicit
    command-line overrides.  Unknown keys are rejected.
    """

    def __init__(self, values):
        self._values = values

    @classmethod
    def load(cls, config_path=None, overrides=None):
        values = dict(DEFAULTS)
        if config_path is not None:
            values.update(_parse_config_file(config_path))
        for key, val in (overrides or {}).items():
            if key not in DEFAULTS:
                raise StageError("unknown config key %r" % key)
            values[key] = val
        return cls(values)

    def get_str(self, key):
        return str(self._values[key]).strip()

    def get_float(self, key):
        try:
            return float(self.get_str(key))
        except ValueError:
            raise StageError("config key %s: %r is not a number"
                             % (key, self.get_str(key))) from None

    def get_int(self, key):
        value = self.get_float(key)
        if value != int(value):
            raise StageError("config key %s: %r is not an integer"
                             % (key, self.get_str(key)))
        return int(value)

    def get_bool(self, key):
        raw = self.get_str(key).lower()
        if raw in ("true", "1", "yes", "on"):
            return True
        if raw in ("false", "0", "no", "off"):
            return False
        raise StageError("config key %s: %r is not a boolean" % (key, raw))

    def get_optional_float(self, key):
        return None if self.get_str(key) == "" else self.get_float(key)

    def get_float_list(self, key):
        raw = self.get_str(key)
        if raw == "":
            return []
        try:
            return [float(part) for part in raw.split(",")]
        except ValueError:
            raise StageError("config key %s: %r is not a comma-separated "
                             "list of numbers" % (key, raw)) from None

    def get_int_list(self, key):
        return [int(v) for v in self.get_float_list(key)]

    def as_dict(self):
        return {key: str(self._values[key]) for key in sorted(self._values)}


def _parse_config_file(path):
    values = {}
    try:
        with open(path) as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                key, sep, val = line.partition("=")
                if not sep:
                    raise StageError("%s:%d: expected 'key = value'"
                                     % (path, lineno))
                key = key.strip()
                if key not in DEFAULTS:
                    raise StageError("%s:%d: unknown key %r"
                                     % (path, lineno, key))
                values[key] = val.strip()
    except OSError as exc:
        raise StageError("cannot read config %s: %s" % (path, exc)) from None
    return values


def _guard(path, force):
    if path.exists() and not force:
        raise StageError("refusing to overwrite %s (use --force)" % path)


def _jsonify(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonify(v) for v in obj]
    if isinstance(obj, bool):
        return obj
    if isinstance(obj, int):
        return obj
    if isinstance(obj, float):
        if math.isnan(obj):
            return "nan"
        if math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
        return obj
    if obj is None or isinstance(obj, str):
        return obj
    if hasattr(obj, "tolist"):
        return _jsonify(obj.tolist())
    if hasattr(obj, "item"):
        return _jsonify(obj.item())
    return str(obj)


def _write_json(path, payload, force):
    _guard(path, force)
    text = json.dumps(_jsonify(payload), indent=2, sort_keys=True,
                      allow_nan=False)
    path.write_text(text + "\n")


def _fmt_cell(value):
    if isinstance(value, str):
        return value
    if isinstance(value, int):
        return str(value)
    return "%.17g" % float(value)


def _write_csv(path, header, rows, force):
    _guard(path, force)
    lines = [header]
    lines.extend(",".join(_fmt_cell(v) for v in row) for row in rows)
    path.write_text("\n".join(lines) + "\n")


def _update_manifest(out, names):
    man_path = out / "manifest.json"
    manifest = {"artifacts": {}}
    if man_path.exists():
        try:
            loaded = json.loads(man_path.read_text())
        except json.JSONDecodeError as exc:
            raise StageError("corrupt manifest %s: %s" % (man_path, exc))
        if isinstance(loaded, dict) and isinstance(loaded.get("artifacts"),
                                                   dict):
            manifest = loaded
    for name in names:
        digest = hashlib.sha256((out / name).read_bytes()).hexdigest()
        manifest["artifacts"][name] = digest
    man_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _resolve_d_gamma(cfg):
    explicit = cfg.get_optional_float("problem.d_gamma")
    if explicit is not None:
        return explicit
    gamma = cfg.get_float("problem.gamma")
    if abs(gamma - 0.5) < 1e-12:
        return 1.0
    from .fracops1d import calibrate_d_gamma

    return calibrate_d_gamma(gamma)


def _build_layer(cfg, gamma=None, model=None, d_gamma=None):
    from .core import model_by_name
    from .layer import solve_layer

    if model is None:
        model = model_by_name(cfg.get_str("problem.model"))
    if gamma is None:
        gamma = cfg.get_float("problem.gamma")
    if d_gamma is None:
        d_gamma = _resolve_d_gamma(cfg)
    return solve_layer(model, gamma, L=cfg.get_float("layer.L"),
                       N=cfg.get_int("layer.N"),
                       tol=cfg.get_float("layer.tol"), d_gamma=d_gamma)


def _layer_for_field(cfg, state, sf):
    ls = state.get("ls")
    if ls is not None and ls.gamma == sf.params.gamma \
            and ls.model.name == getattr(sf.model, "name", None):
        return ls
    d_gamma = sf.diagnostics.get("d_gamma", sf.params.d_gamma)
    ls = _build_layer(cfg, gamma=sf.params.gamma, model=sf.model,
                      d_gamma=d_gamma)
    state["ls"] = ls
    return ls


def _load_field(out, name):
    from .saddle import load_saddle

    path = out / (name + ".csv")
    if not path.exists():
        raise StageError("missing %s; run the saddle stage into this "
                         "directory first" % path)
    try:
        return load_saddle(str(path))
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        raise StageError("cannot load %s: %s" % (path, exc)) from None


def _write_field_csv(path, grid, values, column, force):
    """Write one nodal field in the saddle file layout: half-domain rows
    {s >= t}, lambda-major, then t, then s."""
    rows = []
    for j, lam in enumerate(grid.lambda_nodes):
        for k, t in enumerate(grid.t_nodes):
            for i in range(k, grid.ns + 1):
                rows.append((grid.s_nodes[i], t, lam, values[i, k, j]))
    _write_csv(path, "s,t,lambda," + column, rows, force)


def run_calibrate(cfg, out, force, seed, state):
    from .fracops1d import calibrate_d_gamma

    gamma = cfg.get_float("problem.gamma")
    value, details = calibrate_d_gamma(gamma, return_details=True)
    payload = {"gamma": gamma, "d_gamma": value, "details": details}
    _write_json(out / "calibration.json", payload, force)
    _update_manifest(out, ["calibration.json"])
    return 0


def run_layer(cfg, out, force, seed, state):
    from .layer import save_layer

    ls = _build_layer(cfg)
    state["ls"] = ls
    _guard(out / "layer.csv", force)
    _guard(out / "layer.json", force)
    save_layer(ls, str(out / "layer.csv"))
    _update_manifest(out, ["layer.csv", "layer.json"])
    return 0


def run_saddle(cfg, out, force, seed, state, alt=False):
    from .core import ProblemParams, model_by_name
    from .saddle import derivative_fields, make_grid3, save_saddle, solve_saddle

    ls = state.get("ls")
    if ls is None:
        ls = _build_layer(cfg)
        state["ls"] = ls
    params = ProblemParams(m=cfg.get_int("problem.m"),
                           gamma=cfg.get_float("problem.gamma"),
                           d_gamma=_resolve_d_gamma(cfg))
    grid = make_grid3(params, S=cfg.get_float("grid.S"),
                      Lambda=cfg.get_float("grid.Lambda"),
                      ns=cfg.get_int("grid.ns"), nl=cfg.get_int("grid.nl"),
                      lambda_power=cfg.get_optional_float("grid.p"))
    model = model_by_name(cfg.get_str("problem.model"))
    init = "zero-jiggle" if alt else cfg.get_str("solver.init")
    sf = solve_saddle(grid, params, model, ls,
                      tol=cfg.get_float("solver.tol"), init=init,
                      pad=cfg.get_float("solver.pad"))
    if sf.us is None:
        derivative_fields(sf)
    name = "saddle_alt" if alt else "saddle"
    _guard(out / (name + ".csv"), force)
    _guard(out / (name + ".json"), force)
    save_saddle(sf, str(out / (name + ".csv")))
    state["sf_alt" if alt else "sf"] = sf
    _update_manifest(out, [name + ".csv", name + ".json"])
    return 0


def run_verify(cfg, out, force, seed, state):
    from .core import INFEASIBLE, admissible_b_interval
    from .saddle import derivative_fields
    from .verify import (check_asymptotics, check_barrier_bound,
                         check_monotonicity, check_supersolution,
                         check_uniqueness)

    sf = _load_field(out, "saddle")
    ls = _layer_for_field(cfg, state, sf)
    if sf.us is None:
        derivative_fields(sf)

    reports = {}
    reports["monotonicity"] = check_monotonicity(
        sf, tol=cfg.get_float("verify.sign_tol"))
    reports["barrier_bound"] = check_barrier_bound(
        sf, ls, tol=cfg.get_float("verify.barrier_tol"))
    radii = cfg.get_float_list("verify.radii")
    if not radii:
        radii = [round(f * sf.grid.S, 6) for f in (0.25, 0.5, 0.75)]
    reports["asymptotics"] = check_asymptotics(sf, ls, radii)

    window = admissible_b_interval(sf.params.m)
    if window is INFEASIBLE:
        super_info = {"feasible": False,
                      "reason": "no admissible exponent below dimension 14"}
    else:
        b = cfg.get_float("verify.b")
        super_info = {"feasible": True, "b": b,
                      "window": [window[0], window[1]]}
        reports["supersolution"] = check_supersolution(sf, b)

    if (out / "saddle_alt.csv").exists():
        reports["uniqueness"] = check_uniqueness(sf, _load_field(out,
                                                                 "saddle_alt"))

    passed = all(rep.passed for rep in reports.values())
    payload = {
        "passed": passed,
        "reports": {name: rep.as_dict() for name, rep in reports.items()},
        "supersolution_window": super_info,
        "config": cfg.as_dict(),
    }
    _write_json(out / "verification.json", payload, force)

    asym = reports["asymptotics"]
    by_name = {rec.name: rec for rec in asym.records}
    m_vals = by_name["flattening"].details["values"]
    m2_vals = by_name["flattening_second"].details["values"]
    rows = list(zip(radii, m_vals, m2_vals))
    _write_csv(out / "asymptotics.csv", "R,M,M2", rows, force)
    _update_manifest(out, ["verification.json", "asymptotics.csv"])
    return 0 if passed else 2


def run_stability(cfg, out, force, seed, state):
    from .stability import cutoff_family_check, min_rayleigh

    sf = state.get("sf")
    if sf is None:
        sf = _load_field(out, "saddle")
    rep = min_rayleigh(sf, maxiter=cfg.get_int("stability.maxiter"),
                       tol=cfg.get_optional_float("stability.tol"),
                       deflate=cfg.get_bool("stability.deflate"), seed=seed,
                       method=cfg.get_str("stability.method"))
    payload = {"stability": rep.as_dict(), "config": cfg.as_dict()}

    grid = sf.grid
    if sf.params.m >= 3:
        eps_list = [e for e in cfg.get_float_list("stability.eps")
                    if 4.0 * grid.h <= e < grid.S]
        if len(eps_list) >= 2:
            payload["cutoff"] = cutoff_family_check(sf, eps_list).as_dict()

    _write_json(out / "stability.json", payload, force)
    _write_field_csv(out / "witness.csv", grid, rep.witness, "xi", force)
    history = rep.details.get("quotient_history", [])
    _write_csv(out / "quotient_history.csv", "iteration,quotient",
               list(enumerate(history, 1)), force)
    _update_manifest(out, ["stability.json", "witness.csv",
                           "quotient_history.csv"])
    return 0


def run_geometry(cfg, out, force, seed, state):
    from .geometry import (box, cone_points, cone_wedge, half_ball_cone_ratio,
                           narrow_radius, slab)

    samples = max(cfg.get_int("geometry.samples"), 10000)
    failed = False

    ratio_checks = []
    for m in cfg.get_int_list("geometry.ratio_dims"):
        points = cone_points(m, 1.0, cfg.get_int("geometry.ratio_points"),
                             seed=seed + m)
        for idx, x0 in enumerate(points):
            ratio, err = half_ball_cone_ratio(
                m, x0, 0.2, samples=samples, seed=seed + 31 * m + idx)
            ok = abs(ratio - 0.5) <= 3.0 * err
            failed |= not ok
            ratio_checks.append({"m": m, "point": idx, "ratio": ratio,
                                 "stderr": err, "passed": ok})

    eps = cfg.get_float("geometry.slab_eps")
    theta = cfg.get_float("geometry.theta")
    slab_rep = narrow_radius(slab(eps), box([[-2.0, 2.0]]), theta, 0.0,
                             R_grid=[1.5 * eps, 2.0 * eps, 3.0 * eps,
                                     4.0 * eps, 6.0 * eps],
                             probe_points=4, samples=samples, seed=seed)
    slab_ok = (slab_rep.resolved and slab_rep.radius is not None
               and math.isfinite(slab_rep.radius)
               and slab_rep.radius <= 5.0 * eps)
    failed |= not slab_ok

    wedge_rep = narrow_radius(cone_wedge(2.0), box([[-0.1, 0.1]]), theta, 0.0,
                              R_grid=[0.5, 1.0, 2.0, 4.0],
                              probe_points=4, samples=samples, seed=seed + 1)
    wedge_ok = wedge_rep.resolved and wedge_rep.radius is not None \
        and math.isinf(wedge_rep.radius)
    failed |= not wedge_ok

    payload = {
        "ratio_checks": ratio_checks,
        "slab": dict(slab_rep.as_dict(), eps=eps, passed=slab_ok),
        "wedge": dict(wedge_rep.as_dict(), slope=2.0, passed=wedge_ok),
        "passed": not failed,
        "config": cfg.as_dict(),
    }
    _write_json(out / "geometry.json", payload, force)

    rows = []
    for scenario, rep in (("slab", slab_rep), ("wedge", wedge_rep)):
        for entry in rep.table:
            rows.append((scenario, entry["R"], entry["min_ratio"],
                         entry["stderr"]))
    _write_csv(out / "narrow_radius.csv", "scenario,R,min_ratio,stderr",
               rows, force)
    _update_manifest(out, ["geometry.json", "narrow_radius.csv"])
    return 0 if not failed else 2


def run_pipeline(cfg, out, force, seed, state):
    worst = 0
    worst = max(worst, run_layer(cfg, out, force, seed, state))
    worst = max(worst, run_saddle(cfg, out, force, seed, state))
    worst = max(worst, run_saddle(cfg, out, force, seed, state, alt=True))
    worst = max(worst, run_verify(cfg, out, force, seed, state))
    worst = max(worst, run_stability(cfg, out, force, seed, state))
    worst = max(worst, run_geometry(cfg, out, force, seed, state))
    return worst


_STAGES = {
    "calibrate": run_calibrate,
    "layer": run_layer,
    "saddle": run_saddle,
    "verify": run_verify,
    "stability": run_stability,
    "geometry": run_geometry,
    "pipeline": run_pipeline,
}


def _parse_args(argv):
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH",
                        help="flat key = value config file")
    common.add_argument("--out", metavar="DIR", default="out",
                        help="output directory (default: out)")
    common.add_argument("--force", action="store_true",
                        help="overwrite existing artifacts")
    common.add_argument("--seed", type=int, metavar="N")
    common.add_argument("--threads", type=int, metavar="N",
                        help="thread count (default: $%s)" % THREADS_ENV)
    common.add_argument("--m", type=int, help="half-dimension")
    common.add_argument("--gamma", type=float, help="fractional power")
    common.add_argument("--model", help="nonlinearity name")
    common.add_argument("--grid", type=int, nargs=2,
                        metavar=("N_S", "N_LAMBDA"), help="cell counts")
    common.add_argument("--S", type=float, help="radial box size")
    common.add_argument("--Lambda", type=float, help="extension height")
    common.add_argument("--tol", type=float,
                        help="tolerance of the addressed stage")
    common.add_argument("--b", type=float, help="supersolution exponent")

    parser = argparse.ArgumentParser(
        prog="python -m fracsaddle",
        description="Solve and verify saddle-shaped solutions of the "
                    "fractional Allen-Cahn equation.")
    sub = parser.add_subparsers(dest="stage", required=True)
    helps = {
        "calibrate": "calibrate the Dirichlet-to-Neumann constant",
        "layer": "solve the one-dimensional layer profile",
        "saddle": "solve the doubly radial saddle problem",
        "verify": "run the verification checks on a saved field",
        "stability": "minimize the stability quotient on a saved field",
        "geometry": "measure-ratio and narrowness-radius scenarios",
        "pipeline": "layer, saddle twice, verify, stability, geometry",
    }
    for name in _STAGES:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser.parse_args(argv)


def _collect_overrides(args):
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.m is not None:
        overrides["problem.m"] = args.m
    if args.gamma is not None:
        overrides["problem.gamma"] = args.gamma
    if args.model is not None:
        overrides["problem.model"] = args.model
    if args.grid is not None:
        overrides["grid.ns"], overrides["grid.nl"] = args.grid
    if args.S is not None:
        overrides["grid.S"] = args.S
    if args.Lambda is not None:
        overrides["grid.Lambda"] = args.Lambda
    if args.b is not None:
        overrides["verify.b"] = args.b
    if args.tol is not None:
        key = _STAGE_TOL_KEY.get(args.stage)
        if key is None:
            print("note: --tol has no effect for the %s stage" % args.stage,
                  file=sys.stderr)
        else:
            overrides[key] = args.tol
    return overrides


def main(argv=None):
    args = _parse_args(argv)

    if args.threads is not None:
        for var in _THREAD_VARS:
            os.environ[var] = str(args.threads)
    elif os.environ.get(THREADS_ENV):
        for var in _THREAD_VARS:
            os.environ.setdefault(var, os.environ[THREADS_ENV])

    try:
        cfg = RunConfig.load(args.config, _collect_overrides(args))
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        seed = args.seed if args.seed is not None else cfg.get_int("seed")
        return _STAGES[args.stage](cfg, out, args.force, seed, {})
    except StageError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1
    except (ValueError, RuntimeError, ArithmeticError, OSError) as exc:
        print("error: %s: %s" % (type(exc).__name__, exc), file=sys.stderr)
        return 1
