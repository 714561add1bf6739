"""Command-line entry point: ``sqtomo <command> [--config FILE] [flags] --out DIR``.

Every command resolves its parameters from built-in defaults, then an
optional JSON config (which must carry ``schema_version``), then explicit
flags. Data outputs are deterministic given the resolved config; the run
manifest is the only file carrying timestamps.

Exit codes: 0 success, 2 config error, 3 numerical-invariant failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile
import time
from importlib import metadata
from pathlib import Path

import jsonschema
import numpy as np

from . import adaptive, bayes, bounds, fitkit, naimark, noisekit, povm

SCHEMA_VERSION = 1
TABLE_I_R = (0.15, 0.25, 0.45, 0.55, 0.75, 0.85)
EXIT_CONFIG = 2
EXIT_INVARIANT = 3


class ConfigError(ValueError):
    pass


class InvariantError(RuntimeError):
    pass


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


# ---------------------------------------------------------------- schemas

_NUM = {"type": "number"}
_INT = {"type": "integer", "minimum": 0}
_POS_INT = {"type": "integer", "minimum": 1}
_VEC3 = {"type": "array", "items": _NUM, "minItems": 3, "maxItems": 3}
_NUM_LIST = {"type": "array", "items": _NUM, "minItems": 1}
_INT_LIST = {"type": "array", "items": _POS_INT, "minItems": 1}
_NOISE = {
    "oneOf": [
        {"type": "null"},
        {"type": "number", "minimum": 0, "exclusiveMaximum": 0.5},
        {
            "type": "object",
            "properties": {k: _NUM for k in ("p01_q0", "p10_q0", "p01_q1", "p10_q1")},
            "additionalProperties": False,
        },
    ]
}
_SYSTEMATIC = {
    "type": "object",
    "properties": {
        "kind": {"enum": list(noisekit.SystematicModel.KINDS)},
        "epsilon": _NUM, "seed": _INT, "bias": _VEC3, "rate": _VEC3,
    },
    "additionalProperties": False,
}

# defaults double as the list of accepted keys for each command
DEFAULTS = {
    "bound": {"r": list(TABLE_I_R)},
    "povm": {"r_p": 0.0, "phi": 0.0, "orientation": [0.0, 0.0, 1.0]},
    "dilate": {"povm": None, "r_p": 0.0, "phi": 0.0, "orientation": [0.0, 0.0, 1.0],
               "n_states": 100, "seed": 0},
    "simulate": {"r": list(TABLE_I_R), "theta": None, "r_p": None, "n_shots": 180_000,
                 "group_sizes": [100], "instances": fitkit.DEFAULT_INSTANCES,
                 "bootstrap": fitkit.DEFAULT_BOOTSTRAP, "seed": 0, "noise": None,
                 "mitigate": False, "systematic": None, "record_format": "npz"},
    "fit": {"records": [], "group_sizes": [10, 20, 50, 100, 200, 500, 1000],
            "instances": fitkit.DEFAULT_INSTANCES, "bootstrap": fitkit.DEFAULT_BOOTSTRAP,
            "seed": 0, "mitigate": False},
    "adaptive": {"theta": [0.0, 0.0, 0.5], "n_total": 10_000, "n_sic": None, "scan": False,
                 "mode": "gaussian", "runs": 10_000, "seed": 0, "scan_points": 40,
                 "mse1_rule": "expected"},
    "bayes": {"center": [0.0, 0.0, 0.5], "kappa": 10.0, "alpha": 10.0, "measure": "volume",
              "rp_grid": [round(0.01 * i, 2) for i in range(96)], "points": 64},
}

PROPERTIES = {
    "bound": {"r": _NUM_LIST},
    "povm": {"r_p": _NUM, "phi": _NUM, "orientation": _VEC3},
    "dilate": {"povm": {"type": ["string", "null"]}, "r_p": _NUM, "phi": _NUM,
               "orientation": _VEC3, "n_states": _POS_INT, "seed": _INT},
    "simulate": {"r": _NUM_LIST, "theta": {"oneOf": [{"type": "null"}, _VEC3]},
                 "r_p": {"type": ["number", "null"]}, "n_shots": _POS_INT,
                 "group_sizes": _INT_LIST, "instances": _POS_INT, "bootstrap": _POS_INT,
                 "seed": _INT, "noise": _NOISE, "mitigate": {"type": "boolean"},
                 "systematic": {"oneOf": [{"type": "null"}, _SYSTEMATIC]},
                 "record_format": {"enum": ["csv", "npz"]}},
    "fit": {"records": {"type": "array", "items": {"type": "string"}, "minItems": 1},
            "group_sizes": _INT_LIST, "instances": _POS_INT, "bootstrap": _POS_INT,
            "seed": _INT, "mitigate": {"type": "boolean"}},
    "adaptive": {"theta": _VEC3, "n_total": {"type": "integer", "minimum": 100},
                 "n_sic": {"type": ["integer", "null"], "minimum": 1},
                 "scan": {"type": "boolean"}, "mode": {"enum": ["gaussian", "mc"]},
                 "runs": _POS_INT, "seed": _INT, "scan_points": {"type": "integer", "minimum": 3},
                 "mse1_rule": {"enum": ["expected", "realized"]}},
    "bayes": {"center": _VEC3, "kappa": {"type": "number", "minimum": 0},
              "alpha": {"type": "number", "exclusiveMinimum": 0},
              "measure": {"enum": list(bayes.MEASURES)}, "rp_grid": _NUM_LIST,
              "points": {"type": "integer", "minimum": 8}},
}


def _schema(command: str) -> dict:
    props = dict(PROPERTIES[command])
    props["schema_version"] = {"const": SCHEMA_VERSION}
    return {"type": "object", "properties": props, "additionalProperties": False}


def resolve_config(command: str, config_path: str | None, overrides: dict) -> dict:
    """Merge defaults, config file and flag overrides, then validate."""
    cfg = dict(DEFAULTS[command])
    if config_path is not None:
        try:
            loaded = json.loads(Path(config_path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {config_path}: {exc}") from exc
        if not isinstance(loaded, dict) or "schema_version" not in loaded:
            raise ConfigError("config must be a JSON object with a schema_version field")
        _validate(command, loaded)
        loaded.pop("schema_version")
        cfg.update(loaded)
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    _validate(command, cfg)
    return cfg


def _validate(command: str, cfg: dict) -> None:
    try:
        jsonschema.validate(cfg, _schema(command))
    except jsonschema.ValidationError as exc:
        where = "/".join(map(str, exc.absolute_path)) or "<root>"
        raise ConfigError(f"invalid config at {where}: {exc.message}") from None


def config_hash(command: str, cfg: dict) -> str:
    canonical = json.dumps({"command": command, **cfg}, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


# ---------------------------------------------------------------- output helpers

def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    return str(v)


def _atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


class Outputs:
    """Collects the files a command writes so the manifest can list them."""

    def __init__(self, out_dir: Path):
        self.dir = out_dir
        self.dir.mkdir(parents=True, exist_ok=True)
        self.files: list[Path] = []

    def csv(self, name: str, header, rows) -> None:
        lines = [",".join(header)] + [",".join(_fmt(v) for v in row) for row in rows]
        self.raw(name, ("\n".join(lines) + "\n").encode())

    def json(self, name: str, payload) -> None:
        self.raw(name, (json.dumps(payload, indent=2, sort_keys=True) + "\n").encode())

    def raw(self, name: str, data: bytes) -> None:
        path = self.dir / name
        _atomic_write(path, data)
        self.files.append(path)

    def record(self, name: str, record: noisekit.ShotRecord) -> Path:
        # write via a temp name so a partially written record never appears
        path = self.dir / name
        tmp = self.dir / f".tmp-{name}"
        record.save(tmp)
        os.replace(tmp, path)
        self.files.append(path)
        return path


def write_manifest(out: Outputs, command: str, cfg: dict, started: float) -> None:
    manifest = {
        "command": command,
        "config": cfg,
        "config_sha256": config_hash(command, cfg),
        "seed": cfg.get("seed"),
        "tool_version": _version(),
        "started_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(started)),
        "finished_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "outputs": [
            {"path": p.name, "sha256": hashlib.sha256(p.read_bytes()).hexdigest()}
            for p in out.files
        ],
    }
    _atomic_write(out.dir / "manifest.json", (json.dumps(manifest, indent=2) + "\n").encode())


def _check(condition: bool, message: str) -> None:
    if not condition:
        raise InvariantError(message)


def _complex_rows(m: np.ndarray):
    return [[[float(z.real), float(z.imag)] for z in row] for row in m]


# ---------------------------------------------------------------- commands

def cmd_bound(cfg: dict, out: Outputs) -> None:
    rows = []
    for r in cfg["r"]:
        rep = bounds.BoundReport.at(float(r))
        _check(rep.c_nh <= rep.mse_sic + 1e-12, f"bound exceeds SIC MSE at r={r}")
        rows.append((rep.r, rep.c_nh, rep.mse_sic))
    out.csv("bound.csv", ("r", "c_nh", "mse_sic"), rows)


def _params(cfg: dict) -> povm.StPovmParams:
    return povm.StPovmParams(float(cfg["r_p"]), float(cfg["phi"]), tuple(cfg["orientation"]))


def cmd_povm(cfg: dict, out: Outputs) -> None:
    params = _params(cfg)
    P = povm.build_st_povm(params)
    est = povm.build_estimator(params)
    residual = float(np.abs(P.elements.sum(axis=0) - np.eye(2)).max())
    _check(residual < 1e-12, f"completeness residual {residual:.3g}")
    out.raw("povm.json", (povm.povm_to_json(P) + "\n").encode())
    out.json("povm_report.json", {
        "params": params.to_dict(),
        "sic_equivalent": params.r_p == 0,
        "traces": P.traces.tolist(),
        "completeness_residual": residual,
        "estimator_matrix": est.lab_matrix.tolist(),
    })


def cmd_dilate(cfg: dict, out: Outputs) -> None:
    if cfg["povm"] is not None:
        try:
            P = povm.povm_from_json(Path(cfg["povm"]).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read POVM file: {exc}") from exc
    else:
        P = povm.build_st_povm(_params(cfg))
    d = naimark.dilate(P)
    err = naimark.verify_dilation(d, cfg["n_states"], cfg["seed"])
    unit = naimark.unitarity_error(d)
    out.json("unitary.json", {"unitary": _complex_rows(d.unitary)})
    out.json("dilate_report.json", {"max_error": err, "unitarity_error": unit,
                                    "n_states": cfg["n_states"]})
    _check(unit < 1e-11 and err < 1e-11, f"dilation check failed: {unit:.3g}, {err:.3g}")


def _noise(spec):
    if spec is None:
        return None
    if isinstance(spec, (int, float)):
        return noisekit.ReadoutNoiseSpec.uniform(float(spec))
    return noisekit.ReadoutNoiseSpec(**spec)


def cmd_simulate(cfg: dict, out: Outputs) -> None:
    thetas = ([np.asarray(cfg["theta"], dtype=float)] if cfg["theta"] is not None
              else [np.array([0.0, 0.0, float(r)]) for r in cfg["r"]])
    noise = _noise(cfg["noise"])
    systematic = noisekit.SystematicModel(**cfg["systematic"]) if cfg["systematic"] else None
    confusion = noisekit.build_confusion_matrix(noise) if (noise and cfg["mitigate"]) else None
    rows = []
    for i, theta in enumerate(thetas):
        r = float(np.linalg.norm(theta))
        r_p = float(cfg["r_p"]) if cfg["r_p"] is not None else r
        axis = tuple(theta / r) if r > 0 else (0.0, 0.0, 1.0)
        params = povm.StPovmParams(r_p, 0.0, axis)
        P = povm.build_st_povm(params)
        p = povm.probabilities_for_state(P, theta)
        _check(np.all(p >= -1e-12) and abs(p.sum() - 1) < 1e-12, "outcome probabilities invalid")
        rec = noisekit.sample_shots(P, theta, cfg["n_shots"], seed=int(cfg["seed"]) + i,
                                    noise=noise, systematic=systematic)
        _check(len(rec) == cfg["n_shots"], "record length mismatch")
        out.record(f"shots_{i}.{cfg['record_format']}", rec)
        for n in cfg["group_sizes"]:
            m, se = fitkit.mse_by_subsampling(rec, n, cfg["instances"], cfg["seed"],
                                              mitigation=confusion, n_bootstrap=cfg["bootstrap"])
            _check(np.isfinite(m) and m >= 0, f"non-finite scaled MSE at r={r}")
            rows.append((i, r, r_p, n, m, se, float(bounds.nh_bound(min(r, 1.0)))))
    out.csv("mse.csv", ("state", "r", "r_p", "n", "scaled_mse", "std_err", "c_nh"), rows)


def cmd_fit(cfg: dict, out: Outputs) -> None:
    rows, fits = [], []
    for i, path in enumerate(cfg["records"]):
        try:
            rec = noisekit.ShotRecord.load(path)
        except (OSError, KeyError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read shot record {path}: {exc}") from exc
        sizes = [n for n in sorted(cfg["group_sizes"]) if n <= len(rec)]
        if len(sizes) < 2:
            raise ConfigError(f"{path}: fewer than two group sizes fit in the record")
        confusion = (noisekit.build_confusion_matrix(rec.noise)
                     if cfg["mitigate"] and rec.noise is not None else None)
        curve = fitkit.build_mse_curve(rec, sizes, cfg["instances"], cfg["seed"],
                                       cfg["bootstrap"], mitigation=confusion)
        fit = fitkit.fit_scaling_model(curve)
        _check(all(np.isfinite([fit.c, fit.delta, fit.c_err, fit.delta_err])),
               "scaling fit produced non-finite parameters")
        rows += [(i, pt.n, pt.mean_scaled_mse, pt.std_err) for pt in curve.points]
        fits.append({"record": Path(path).name, "c": fit.c, "delta": fit.delta,
                     "c_err": fit.c_err, "delta_err": fit.delta_err})
    out.csv("curve.csv", ("record", "n", "scaled_mse", "std_err"), rows)
    out.json("fit.json", fits if len(fits) > 1 else fits[0])


def cmd_adaptive(cfg: dict, out: Outputs) -> None:
    theta = np.asarray(cfg["theta"], dtype=float)
    n_total = cfg["n_total"]
    summary = {"theta": theta.tolist(), "n_total": n_total, "mode": cfg["mode"],
               "mse1_rule": cfg["mse1_rule"]}
    if cfg["scan"]:
        grid = np.unique(np.round(np.geomspace(1, n_total - 1, cfg["scan_points"])).astype(int))
        if cfg["mode"] == "gaussian":
            vals, errs, ok = adaptive.checked_scan(theta, n_total, grid,
                                                   mse1_rule=cfg["mse1_rule"])
        else:
            res = [adaptive.run_two_step_mc(
                theta, adaptive.TwoStepPlan(n_total, int(n), mse1_rule=cfg["mse1_rule"]),
                cfg["runs"], cfg["seed"]) for n in grid]
            vals = np.array([r.mean_scaled_mse for r in res])
            errs = np.array([r.std_err for r in res])
            ok = np.ones(len(grid), dtype=bool)
        rows = list(zip(grid.tolist(), vals.tolist(), errs.tolist(), ok.astype(int).tolist()))
        # minima are counted over converged points only; flagged points stay in the CSV
        summary["n_unconverged"] = int((~ok).sum())
        summary["n_local_minima"] = adaptive._local_minima(vals[ok])
        summary["unique_minimum"] = summary["n_local_minima"] == 1
        if cfg["mode"] == "gaussian":
            best = adaptive.optimal_n_sic(theta, n_total, mse1_rule=cfg["mse1_rule"])
            r = adaptive.run_two_step_gaussian(
                theta, adaptive.TwoStepPlan(n_total, best, mse1_rule=cfg["mse1_rule"]))
            summary.update(optimal_n_sic=best, min_scaled_mse=r.mean_scaled_mse)
        else:
            i = int(np.argmin(vals))
            summary.update(optimal_n_sic=int(grid[i]), min_scaled_mse=float(vals[i]))
    else:
        n_sic = cfg["n_sic"] if cfg["n_sic"] is not None else adaptive.optimal_n_sic(
            theta, n_total, mse1_rule=cfg["mse1_rule"])
        plan = adaptive.TwoStepPlan(n_total, int(n_sic), mse1_rule=cfg["mse1_rule"])
        if cfg["mode"] == "gaussian":
            r = adaptive.run_two_step_gaussian(theta, plan)
        else:
            r = adaptive.run_two_step_mc(theta, plan, cfg["runs"], cfg["seed"])
        rows = [(int(n_sic), r.mean_scaled_mse, r.std_err, 1)]
        summary.update(n_sic=int(n_sic), scaled_mse=r.mean_scaled_mse, std_err=r.std_err)
    _check(all(np.isfinite(row[1]) and row[1] > 0 for row in rows), "non-finite adaptive MSE")
    summary["nh_bound"] = float(bounds.nh_bound(min(float(np.linalg.norm(theta)), 1.0)))
    out.csv("adaptive.csv", ("n_sic", "scaled_mse", "std_err", "converged"), rows)
    out.json("adaptive.json", summary)


def cmd_bayes(cfg: dict, out: Outputs) -> None:
    spec = bayes.PriorSpec(tuple(cfg["center"]), float(cfg["kappa"]), float(cfg["alpha"]),
                           cfg["measure"])
    quad = bayes.RiskQuadrature(points=cfg["points"], refine_points=cfg["points"] * 3 // 2)
    curve = bayes.minimize_risk(spec, cfg["rp_grid"], quad)
    _check(curve.min_risk >= 0 and np.isfinite(curve.min_risk), "negative Bayesian risk")
    out.csv("risk.csv", ("r_p", "risk"), curve.points)
    out.json("bayes.json", {"argmin_rp": curve.argmin_rp, "min_risk": curve.min_risk,
                            "bound_at_center": bayes.bound_at_center(spec)})


COMMANDS = {
    "bound": cmd_bound, "povm": cmd_povm, "dilate": cmd_dilate, "simulate": cmd_simulate,
    "fit": cmd_fit, "adaptive": cmd_adaptive, "bayes": cmd_bayes,
}


# ---------------------------------------------------------------- argument parsing

def _floats(text: str):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _ints(text: str):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _grid(text: str):
    """``a,b,c`` or ``start:stop:num`` (inclusive linspace)."""
    if ":" in text:
        try:
            start, stop, num = text.split(":")
            return np.linspace(float(start), float(stop), int(num)).tolist()
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad grid {text!r}; use start:stop:num")
    return _floats(text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sqtomo", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=_version())
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="JSON config with schema_version")
        p.add_argument("--out", default=".", help="output directory (default: cwd)")
        return p

    p = add("bound", "N-H bound and SIC MSE table")
    p.add_argument("--r", type=_floats)

    for name, help_ in (("povm", "build an ST-POVM and its estimator"),
                        ("dilate", "Naimark dilation of a POVM")):
        p = add(name, help_)
        p.add_argument("--r-p", dest="r_p", type=float)
        p.add_argument("--phi", type=float)
        p.add_argument("--orientation", type=_floats)
        if name == "dilate":
            p.add_argument("--povm", help="POVM JSON file (overrides --r-p)")
            p.add_argument("--n-states", dest="n_states", type=int)
            p.add_argument("--seed", type=int)

    p = add("simulate", "sample shot records and their scaled MSE")
    p.add_argument("--r", type=_floats, help="Bloch lengths along +z")
    p.add_argument("--theta", type=_floats, help="single Bloch vector (overrides --r)")
    p.add_argument("--r-p", dest="r_p", type=float, help="default: |theta|")
    p.add_argument("--n-shots", dest="n_shots", type=int)
    p.add_argument("--group-sizes", dest="group_sizes", type=_ints)
    p.add_argument("--instances", type=int)
    p.add_argument("--bootstrap", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--noise", type=float, help="uniform readout flip probability")
    p.add_argument("--mitigate", action="store_const", const=True)
    p.add_argument("--record-format", dest="record_format", choices=("csv", "npz"))

    p = add("fit", "fit N MSE(N) = C + N delta to shot records")
    p.add_argument("records", nargs="*")
    p.add_argument("--group-sizes", dest="group_sizes", type=_ints)
    p.add_argument("--instances", type=int)
    p.add_argument("--bootstrap", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--mitigate", action="store_const", const=True)

    p = add("adaptive", "two-step adaptive scheme")
    p.add_argument("--theta", type=_floats)
    p.add_argument("--n-total", dest="n_total", type=int)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--n-sic", dest="n_sic", type=int)
    g.add_argument("--scan", action="store_const", const=True)
    p.add_argument("--mode", choices=("gaussian", "mc"))
    p.add_argument("--runs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--scan-points", dest="scan_points", type=int)
    p.add_argument("--mse1-rule", dest="mse1_rule", choices=("expected", "realized"))

    p = add("bayes", "Bayesian risk over the ST-POVM family")
    p.add_argument("--center", type=_floats)
    p.add_argument("--kappa", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--measure", choices=bayes.MEASURES)
    p.add_argument("--rp-grid", dest="rp_grid", type=_grid)
    p.add_argument("--points", type=int)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    command = args.command
    overrides = {k: v for k, v in vars(args).items()
                 if k not in ("command", "config", "out") and v not in (None, [])}
    started = time.time()
    try:
        cfg = resolve_config(command, args.config, overrides)
        out = Outputs(Path(args.out))
        COMMANDS[command](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except povm.PureStateDegeneracyError as exc:
        print(f"config error: pure-state degeneracy: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InvariantError, adaptive.QuadratureError, bayes.QuadratureError,
            np.linalg.LinAlgError) as exc:
        print(f"numerical invariant failed: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    write_manifest(out, command, cfg, started)
    for p in out.files:
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
