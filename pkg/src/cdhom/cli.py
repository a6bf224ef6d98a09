"""Command-line driver: ``cdhom <command> --config run.json --out DIR``.

Commands: ``complex-check``, ``solve``, ``homogenize``, ``nonlocal`` and
``impedance``.  Each validates its JSON config (unknown keys are rejected),
writes its results into ``--out`` and a ``manifest.json`` holding the fully
defaulted config, so a run can be repeated exactly.

Exit codes: 0 success, 1 a check failed, 2 config error, 3 admissibility
failure, 4 geometry or divisibility error, 5 kernel smallness failure.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import os
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .coefficients import (
    ConstantProfile,
    LayeredProfile,
    SmallnessError,
    TabulatedProfile,
    TrigProfile,
    two_phase,
)
from .curldiv import AdmissibilityError, RightHandSide, _jsonable, solve_curldiv
from .grid import BoxGrid, GeometryError, build_box_complex, sample_coefficient
from .hilbert import AdmissibilityParams, MultiplicationCoefficient, SingularCoefficientError

SCHEMA_VERSION = "cdhom/1"
EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_ADMISSIBILITY, EXIT_GEOMETRY, EXIT_SMALLNESS = 0, 1, 2, 3, 4, 5


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# schema

_SCALAR = {
    "oneOf": [
        {"type": "number"},
        {"type": "object", "properties": {"re": {"type": "number"}, "im": {"type": "number"}},
         "required": ["re", "im"], "additionalProperties": False},
    ]
}
_MATRIX = {"type": "array", "minItems": 3, "maxItems": 3,
           "items": {"type": "array", "minItems": 3, "maxItems": 3, "items": _SCALAR}}
_VALUE = {"oneOf": [_SCALAR, _MATRIX]}
_INT3 = {"type": "array", "minItems": 3, "maxItems": 3, "items": {"type": "integer"}}


def _profile_schema(name, props, required=()):
    props = dict(props, profile={"const": name})
    return {"type": "object", "properties": props, "required": ["profile", *required], "additionalProperties": False}


PROFILE_SCHEMA = {
    "oneOf": [
        _profile_schema("constant", {"value": _VALUE}, ["value"]),
        _profile_schema("two_phase", {"values": {"type": "array", "minItems": 2, "maxItems": 2, "items": _VALUE},
                                      "fraction": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                                      "axis": {"enum": [0, 1, 2]}}, ["values"]),
        _profile_schema("layered", {"breakpoints": {"type": "array", "minItems": 1, "items": {"type": "number"}},
                                    "values": {"type": "array", "minItems": 1, "items": _VALUE},
                                    "axis": {"enum": [0, 1, 2]}}, ["breakpoints", "values"]),
        _profile_schema("trig", {"amplitude": _SCALAR, "wavevector": _INT3, "offset": _SCALAR}, ["amplitude"]),
        _profile_schema("tabulated", {"samples": {"type": "array", "minItems": 1}}, ["samples"]),
    ]
}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "schema": {"const": SCHEMA_VERSION},
        "variant": {"enum": ["curl-div", "impedance"]},
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "N": {"oneOf": [{"type": "integer", "minimum": 2}, _INT3]},
                "L": {"type": "array", "minItems": 3, "maxItems": 3, "items": {"type": "number", "exclusiveMinimum": 0}},
            },
        },
        "coefficient": PROFILE_SCHEMA,
        "kernel": PROFILE_SCHEMA,
        "impedance": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "a_e": PROFILE_SCHEMA, "b_e": PROFILE_SCHEMA, "a_h": PROFILE_SCHEMA, "b_h": PROFILE_SCHEMA,
                "edge_policy": {"enum": ["closure", "none"]},
                "experiment": {"enum": ["diag", "series"]},
            },
        },
        "rhs": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"type": {"enum": ["manufactured", "zero"]}},
        },
        "ns": {"type": "array", "minItems": 1, "items": {"type": "integer", "minimum": 1}},
        "seed": {"type": "integer", "minimum": 0},
        "params": {
            "oneOf": [
                {"type": "null"},
                {"type": "object", "additionalProperties": False, "required": ["alpha", "beta"],
                 "properties": {"alpha": {"type": "number", "exclusiveMinimum": 0},
                                "beta": {"type": "number", "exclusiveMinimum": 0}}},
            ]
        },
        "method": {"enum": ["auto", "dense", "sparse"]},
        "mode": {"enum": ["neumann", "direct"]},
        "tolerances": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"decay_factor": {"type": "number", "exclusiveMinimum": 0},
                           "floor_rel": {"type": "number", "minimum": 0}},
        },
    },
}

_ONE = {"profile": "constant", "value": 1.0}
DEFAULTS = {
    "schema": SCHEMA_VERSION,
    "variant": "curl-div",
    "grid": {"N": 8, "L": [1.0, 1.0, 1.0]},
    "coefficient": {"profile": "two_phase", "values": [1.0, 4.0], "fraction": 0.5, "axis": 0},
    "kernel": {"profile": "trig", "amplitude": 0.5, "wavevector": [1, 0, 0], "offset": 0.0},
    "impedance": {
        "a_e": _ONE,
        "b_e": {"profile": "two_phase", "values": [1.0, 4.0], "fraction": 0.5, "axis": 0},
        "a_h": _ONE,
        "b_h": _ONE,
        "edge_policy": "closure",
        "experiment": "diag",
    },
    "rhs": {"type": "manufactured"},
    "ns": [1, 2, 4],
    "seed": 0,
    "params": None,
    "method": "auto",
    "mode": "neumann",
    "tolerances": {"decay_factor": 0.5, "floor_rel": 1e-8},
}
_PROFILE_DEFAULTS = {
    "two_phase": {"fraction": 0.5, "axis": 0},
    "layered": {"axis": 0},
    "trig": {"wavevector": [1, 0, 0], "offset": 0.0},
}
_PROFILE_KEYS = {"coefficient", "kernel", "a_e", "b_e", "a_h", "b_h"}


def _merge(default, given, key=None):
    if key in _PROFILE_KEYS and isinstance(given, dict):
        # a profile replaces the default wholesale, then gets its own defaults
        out = copy.deepcopy(_PROFILE_DEFAULTS.get(given.get("profile"), {}))
        out.update(copy.deepcopy(given))
        return out
    if isinstance(default, dict) and isinstance(given, dict):
        out = copy.deepcopy(default)
        for k, v in given.items():
            out[k] = _merge(default.get(k), v, k)
        return out
    return copy.deepcopy(given)


def load_config(path=None, text=None) -> dict:
    """Parse, validate and complete a config with every default made explicit."""
    try:
        raw = json.loads(Path(path).read_text() if text is None else text) if (path or text) else {}
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("the config must be a JSON object")
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at {where}: {exc.message}") from None
    cfg = _merge(DEFAULTS, raw)
    jsonschema.validate(cfg, CONFIG_SCHEMA)
    return cfg


# ---------------------------------------------------------------------------
# config -> objects


def _scalar(v):
    return complex(v["re"], v["im"]) if isinstance(v, dict) else complex(v)


def _value(v):
    if isinstance(v, list):
        return np.array([[_scalar(x) for x in row] for row in v])
    return _scalar(v)


def build_profile(spec: dict):
    kind = spec["profile"]
    try:
        if kind == "constant":
            return ConstantProfile(_value(spec["value"]))
        if kind == "two_phase":
            v1, v2 = (_value(v) for v in spec["values"])
            return two_phase(v1, v2, spec.get("fraction", 0.5), spec.get("axis", 0))
        if kind == "layered":
            return LayeredProfile(spec["breakpoints"], [_value(v) for v in spec["values"]], spec.get("axis", 0))
        if kind == "trig":
            return TrigProfile(_scalar(spec["amplitude"]), spec.get("wavevector", [1, 0, 0]), _scalar(spec.get("offset", 0.0)))
        if kind == "tabulated":
            return TabulatedProfile(spec["samples"])
    except ValueError as exc:
        raise ConfigError(f"invalid {kind} profile: {exc}") from None
    raise ConfigError(f"unknown profile {kind!r}")


def build_grid(cfg) -> BoxGrid:
    return BoxGrid(tuple(np.broadcast_to(cfg["grid"]["N"], 3)), tuple(cfg["grid"]["L"]))


def _params(cfg):
    p = cfg["params"]
    if p is None:
        return None
    try:
        return AdmissibilityParams(p["alpha"], p["beta"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


# ---------------------------------------------------------------------------
# output


def _write_json(path: Path, data):
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _finish(out: Path, command: str, cfg: dict, outputs: dict, status: str):
    manifest = {"schema": SCHEMA_VERSION, "version": __version__, "command": command, "config": cfg,
                "outputs": sorted(outputs), "status": status}
    _write_json(out / "manifest.json", manifest)


def _decay_summary(report, cfg):
    tol = cfg["tolerances"]
    out = {}
    for kind in report.kinds:
        d = report.decay(kind, tol["decay_factor"], tol["floor_rel"])
        out[kind] = {pid: {"initial": a, "final": b, "passes": ok} for pid, (a, b, ok) in d.items()}
    return out


# ---------------------------------------------------------------------------
# commands


def cmd_complex_check(cfg, out: Path, jobs: int):
    grid = build_grid(cfg)
    if cfg["variant"] == "impedance":
        from .impedance import build_impedance_operator, impedance_kernel_range

        op = build_impedance_operator(grid, cfg["impedance"]["edge_policy"])
        kr = impedance_kernel_range(op)
        report = {"variant": "impedance", "grid": list(grid.N), "edge_policy": op.edge_policy,
                  "domain_dim": op.domain_dim, "constraint_rows": op.constraints.shape[0],
                  "kernel_dim": int(kr.kernel.shape[1]), "coercivity_constant": kr.c}
        ok = report["kernel_dim"] == 0
    else:
        cx = build_box_complex(grid)
        report = {"variant": "curl-div", "grid": list(grid.N), "dims": cx.dims,
                  "pairs": {k: r._asdict() for k, r in cx.reports.items()}, "exact": cx.exact}
        ok = cx.exact
    report["passes"] = bool(ok)
    _write_json(out / "complex_check.json", report)
    print(json.dumps({"passes": report["passes"]}, sort_keys=True))
    return (EXIT_OK if ok else EXIT_CHECK), {"complex_check.json"}


def _write_field_csv(path: Path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "component", "x", "y", "z", "re", "im"])
        for r in rows:
            w.writerow(r)


def cmd_solve(cfg, out: Path, jobs: int):
    grid = build_grid(cfg)
    params = _params(cfg)
    if cfg["variant"] == "impedance":
        return _solve_impedance(cfg, grid, params, out)
    from .homogenization import admissibility_range, common_params, manufactured_field

    d = build_profile(cfg["coefficient"])
    cx = build_box_complex(grid, certify=False)
    a = sample_coefficient(d, grid, "edge")
    b = sample_coefficient(d, grid, "cell")
    if params is None:
        params = admissibility_range(d) if isinstance(d, LayeredProfile) and d.is_scalar else common_params([a, b])
    u_ref = None
    if cfg["rhs"]["type"] == "zero":
        rhs = RightHandSide.zero(cx)
    else:
        u_ref = manufactured_field(cx)
        rhs = RightHandSide.manufactured(cx, a, b, u_ref)
    sol = solve_curldiv(cx, a, b, rhs, params, cfg["method"])
    fs = cx.spaces["face"]
    report = {"method": sol.method, "residual_curl": sol.residual_curl, "residual_div": sol.residual_div,
              "norm_u": fs.norm(sol.u), "alpha": params.alpha, "beta": params.beta}
    if u_ref is not None:
        report["manufactured_error"] = fs.norm(sol.u - u_ref) / fs.norm(u_ref)
    if sol.estimate is not None:
        report["estimate"] = sol.estimate._asdict()
    X, comp = grid.positions("face"), grid.component_ids("face")
    _write_field_csv(out / "solution.csv", ((i, int(comp[i]), *map(repr, X[i].tolist()), repr(float(v.real)), repr(float(v.imag)))
                                            for i, v in enumerate(sol.u)))
    _write_json(out / "solve.json", report)
    print(json.dumps({k: report[k] for k in ("residual_curl", "residual_div")}, sort_keys=True))
    return EXIT_OK, {"solution.csv", "solve.json"}


def _impedance_setup(cfg, grid):
    from .impedance import build_impedance_operator

    imp = cfg["impedance"]
    op = build_impedance_operator(grid, imp["edge_policy"])
    profiles = {k: build_profile(imp[k]) for k in ("a_e", "b_e", "a_h", "b_h")}
    return op, profiles


def _solve_impedance(cfg, grid, params, out: Path):
    from .impedance import (
        DiagBlockCoefficient,
        _common_params,
        impedance_admissibility,
        manufactured_impedance_data,
        solve_impedance,
    )

    op, profiles = _impedance_setup(cfg, grid)
    a = DiagBlockCoefficient.from_profiles(op, *(profiles[k] for k in ("a_e", "b_e", "a_h", "b_h")))
    rep = impedance_admissibility(a, params or AdmissibilityParams(1.0, 1.0), op, method=cfg["method"])
    if params is None:
        params = _common_params([rep])
        rep = rep._replace(params=params, member=True)
    if not rep.member:
        raise AdmissibilityError("a", rep)
    x0 = None
    if cfg["rhs"]["type"] == "zero":
        F = np.zeros(op.stack.dim)
    else:
        x0, F = manufactured_impedance_data(op, a, cfg["seed"])
    sol = solve_impedance(op, a, F, method=cfg["method"])
    report = {"residual": sol.residual, "constraint_residual": sol.constraint_residual,
              "norm_x": op.ambient.norm(sol.x), "floors": rep.floors, "alpha": params.alpha, "beta": params.beta}
    if x0 is not None:
        report["manufactured_error"] = op.ambient.norm(sol.x - x0) / op.ambient.norm(x0)
    X = grid.positions("node")
    nn = op.n_nodes
    _write_field_csv(out / "solution.csv", ((c * nn + p, c, *map(repr, X[p].tolist()), repr(float(sol.x[c * nn + p].real)),
                                             repr(float(sol.x[c * nn + p].imag))) for c in range(6) for p in range(nn)))
    _write_json(out / "solve.json", report)
    print(json.dumps({"residual": sol.residual}, sort_keys=True))
    return EXIT_OK, {"solution.csv", "solve.json"}


def _series_outputs(report, cfg, out: Path, name: str, extra=None):
    report.to_csv(out / f"{name}.csv")
    summary = report.summary()
    summary["decay"] = _decay_summary(report, cfg)
    if extra:
        summary.update(extra)
    _write_json(out / f"{name}.json", summary)
    ok = all(v["passes"] for kind in summary["decay"].values() for v in kind.values())
    print(json.dumps({"all_probes_decay": ok, "rows": len(report.rows)}, sort_keys=True))
    return {f"{name}.csv", f"{name}.json"}


def cmd_homogenize(cfg, out: Path, jobs: int):
    from .homogenization import run_homogenization_series

    grid = build_grid(cfg)
    d = build_profile(cfg["coefficient"])
    if not (isinstance(d, ConstantProfile) or (isinstance(d, LayeredProfile) and d.is_scalar)):
        raise ConfigError("homogenize needs a scalar constant or layered coefficient")
    S = run_homogenization_series(grid, d, cfg["ns"], params=_params(cfg), jobs=jobs, seed=cfg["seed"],
                                  method=cfg["method"])
    files = _series_outputs(S.report, cfg, out, "homogenize",
                            {"effective": S.effective, "limit": S.limit_summary})
    return EXIT_OK, files


def cmd_nonlocal(cfg, out: Path, jobs: int):
    from .homogenization import run_nonlocal_series

    grid = build_grid(cfg)
    k = build_profile(cfg["kernel"])
    S = run_nonlocal_series(grid, k, cfg["ns"], mode=cfg["mode"], jobs=jobs, seed=cfg["seed"], method=cfg["method"])
    files = _series_outputs(S.report, cfg, out, "nonlocal", {"effective": S.effective, "limit": S.limit_summary})
    return EXIT_OK, files


def cmd_impedance(cfg, out: Path, jobs: int):
    from .impedance import (
        DiagBlockCoefficient,
        diag_characterization_experiment,
        manufactured_impedance_data,
        predicted_diag_limit,
        run_impedance_series,
    )
    from .homogenization import check_divisibility

    grid = build_grid(cfg)
    check_divisibility(grid, cfg["ns"])
    op, profiles = _impedance_setup(cfg, grid)
    order = ("a_e", "b_e", "a_h", "b_h")
    if cfg["impedance"]["experiment"] == "diag":
        E = diag_characterization_experiment(op, profiles, cfg["ns"], seed=cfg["seed"])
        from .curldiv import SeriesReport

        rows = [(n, pid, f"side_i:{k}", d) for n, pid, k, d in E.side_i.rows]
        rows += [(n, pid, f"side_ii:{k}", d) for n, pid, k, d in E.side_ii.rows]
        scales = {f"side_i:{k}": v for k, v in E.side_i.scales.items()}
        scales.update({f"side_ii:{k}": v for k, v in E.side_ii.scales.items()})
        report = SeriesReport(E.ns, rows, E.side_i.summaries, scales, {"experiment": "diag", "grid": list(grid.N)})
        predicted = {k: v for k, v in E.predicted.items()}
        files = _series_outputs(report, cfg, out, "impedance", {"predicted": predicted})
        return EXIT_OK, files
    pred = predicted_diag_limit(*(profiles[k] for k in order))
    limit = DiagBlockCoefficient(op.stack, *(pred[k] for k in order))
    seq = [(n, DiagBlockCoefficient.from_profiles(op, *(profiles[k] for k in order), n=n)) for n in cfg["ns"]]
    if cfg["rhs"]["type"] == "zero":
        F = np.zeros(op.stack.dim)
    else:
        F = manufactured_impedance_data(op, limit, cfg["seed"])[1]
    report = run_impedance_series(op, seq, limit, F, params=_params(cfg), jobs=jobs, seed=cfg["seed"],
                                  method=cfg["method"])
    files = _series_outputs(report, cfg, out, "impedance", {"predicted": pred})
    return EXIT_OK, files


COMMANDS = {
    "complex-check": cmd_complex_check,
    "solve": cmd_solve,
    "homogenize": cmd_homogenize,
    "nonlocal": cmd_nonlocal,
    "impedance": cmd_impedance,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cdhom", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="JSON run config (defaults apply when omitted)")
        p.add_argument("--out", type=Path, default=Path("."), help="output directory")
        p.add_argument("--jobs", type=int, default=os.cpu_count() or 1, help="worker threads")
        p.add_argument("--seed", type=int, help="probe seed (overrides the config)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed must be nonnegative")
            cfg["seed"] = args.seed
        if args.jobs < 1:
            raise ConfigError("--jobs must be positive")
        args.out.mkdir(parents=True, exist_ok=True)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    status, code, outputs = "ok", EXIT_OK, set()
    try:
        code, outputs = COMMANDS[args.command](cfg, args.out, args.jobs)
        status = "ok" if code == EXIT_OK else "check failed"
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        status, code = "config error", EXIT_CONFIG
    except (AdmissibilityError, SingularCoefficientError) as exc:
        floors = getattr(getattr(exc, "report", None), "floors", None)
        print(f"admissibility failure: {exc}", file=sys.stderr)
        if floors is not None:
            print(json.dumps({"floors": list(floors)}), file=sys.stderr)
        status, code = "admissibility failure", EXIT_ADMISSIBILITY
    except GeometryError as exc:
        print(f"geometry error: {exc}", file=sys.stderr)
        status, code = "geometry error", EXIT_GEOMETRY
    except SmallnessError as exc:
        print(f"kernel smallness failure: {exc} (measured norm {exc.norm:.6g})", file=sys.stderr)
        status, code = "smallness failure", EXIT_SMALLNESS
    _finish(args.out, args.command, cfg, outputs, status)
    return code


if __name__ == "__main__":
    sys.exit(main())
