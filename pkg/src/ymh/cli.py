"""Command line front end: `ymh <command> [options]`.

Every command writes `report.json` (checks, config and its hash) into the
output directory and exits 0 when all checks pass, 1 when a check fails,
2 on configuration errors and 3 on I/O errors.
"""
from __future__ import annotations

import os
import sys

_threads = os.environ.get("YMH_THREADS")
if _threads is not None and _threads.strip().isdigit() and int(_threads) > 0:
    for _k in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS"):
        os.environ.setdefault(_k, _threads.strip())

import argparse  # noqa: E402
import csv  # noqa: E402
import hashlib  # noqa: E402
import json  # noqa: E402
import math  # noqa: E402
import time  # noqa: E402
from dataclasses import dataclass, field as dc_field  # noqa: E402

import numpy as np  # noqa: E402

if sys.version_info >= (3, 11):  # noqa: E402
    import tomllib
else:
    import tomli as tomllib

from . import __version__  # noqa: E402
from . import bubbling as bb  # noqa: E402
from . import geometry as ge  # noqa: E402
from . import lattice as lat  # noqa: E402
from . import smoothfields as sf  # noqa: E402
from . import variational as va  # noqa: E402

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3
CHECKS = ("el", "bochner", "conformal", "trace", "slice")


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- configuration

# section -> key -> (type, lower, upper, default); None bounds are open
SCHEMA = {
    "geometry": {
        "n": (int, 2, 8, 4),
        "quad_order": (int, 4, 64, va.VAR_ORDER),
        "fd_step": (float, 1e-7, 1e-2, va.HV),
    },
    "lattice": {
        "N": (int, 4, 128, 16),
        "a": (float, 0.0, None, 0.0),  # 0 means 1/N
        "lambda": (float, 0.0, None, 1.0),
        "variant": (str, None, None, "fiber"),
        "eps0": (float, 0.0, None, lat.EPS0),
        "eps1": (float, 0.0, None, lat.EPS1),
        "amp": (float, 0.0, 10.0, 0.3),
    },
    "flow": {
        "max_iter": (int, 0, 10**7, 5000),
        "step": (float, 0.0, None, 1.0),
        "step_rule": (str, None, None, "backtracking"),
        "precondition": (bool, None, None, True),
        "mass": (float, 0.0, None, 1.0),
        "tol": (float, 0.0, None, 0.0),  # 0 means 1e-8 * sites
    },
    "bubble": {
        "ladder": (list, None, None, []),
        "R": (float, 1.0, None, 8.0),
        "delta": (float, 0.0, None, 0.25),
    },
    "run": {
        "entry": (str, None, None, "flat_unit"),
        "sequence": (str, None, None, ""),
        "out": (str, None, None, "ymh-out"),
        "deterministic": (bool, None, None, False),
        "seed": (int, 0, 2**32 - 1, 0),
        "trials": (int, 1, 5000, va.DEFAULT_TRIALS),
        "points": (int, 1, 10000, 50),
    },
}
CHOICES = {("lattice", "variant"): ("fiber", "adjoint"),
           ("flow", "step_rule"): ("backtracking", "fixed")}


def _coerce(sec, key, val):
    typ, lo, hi, _ = SCHEMA[sec][key]
    if typ is float and isinstance(val, int) and not isinstance(val, bool):
        val = float(val)
    if typ is list and isinstance(val, str):
        try:
            val = [float(x) for x in val.split(",") if x.strip()]
        except ValueError as e:
            raise ConfigError(f"{sec}.{key}: bad list {val!r}") from e
    if typ is list:
        if not isinstance(val, list) or not all(isinstance(x, (int, float)) for x in val):
            raise ConfigError(f"{sec}.{key}: expected a list of numbers")
        return [float(x) for x in val]
    if not isinstance(val, typ) or (typ is int and isinstance(val, bool)):
        raise ConfigError(f"{sec}.{key}: expected {typ.__name__}, got {type(val).__name__}")
    if typ in (int, float):
        if not math.isfinite(val):
            raise ConfigError(f"{sec}.{key}: must be finite")
        if lo is not None and val < lo or hi is not None and val > hi:
            raise ConfigError(f"{sec}.{key} = {val} outside [{lo}, {hi}]")
    if (sec, key) in CHOICES and val not in CHOICES[(sec, key)]:
        raise ConfigError(f"{sec}.{key} must be one of {CHOICES[(sec, key)]}")
    return val


@dataclass
class ExperimentConfig:
    values: dict = dc_field(default_factory=lambda: {
        s: {k: v[3] for k, v in keys.items()} for s, keys in SCHEMA.items()})

    def get(self, sec, key):
        return self.values[sec][key]

    def set(self, sec, key, val):
        if sec not in SCHEMA or key not in SCHEMA[sec]:
            raise ConfigError(f"unknown config key {sec}.{key}")
        self.values[sec][key] = _coerce(sec, key, val)

    def update(self, data: dict):
        if not isinstance(data, dict):
            raise ConfigError("config must be a table of sections")
        for sec, body in data.items():
            if sec not in SCHEMA:
                raise ConfigError(f"unknown config section [{sec}]")
            if not isinstance(body, dict):
                raise ConfigError(f"[{sec}] must be a table")
            for key, val in body.items():
                self.set(sec, key, val)

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"config parse error: {e}") from e
        cfg = cls()
        cfg.update(data)
        return cfg

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        """TOML file, or a report.json whose embedded config is re-used."""
        with open(path, "rb") as fh:
            raw = fh.read()
        if str(path).endswith(".json"):
            try:
                rep = json.loads(raw)
            except json.JSONDecodeError as e:
                raise ConfigError(f"report parse error: {e}") from e
            cfg = cls()
            cfg.update(rep.get("config", rep))
            return cfg
        return cls.from_text(raw.decode())

    def to_text(self) -> str:
        lines = []
        for sec in SCHEMA:
            lines.append(f"[{sec}]")
            for key in SCHEMA[sec]:
                lines.append(f"{key} = {_toml_value(self.values[sec][key])}")
            lines.append("")
        return "\n".join(lines)

    def portable(self) -> dict:
        """Values without the output directory, which does not affect results."""
        v = {sec: dict(body) for sec, body in self.values.items()}
        del v["run"]["out"]
        return v

    def canonical(self) -> str:
        return json.dumps(self.portable(), sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    @property
    def N(self) -> int:
        return self.get("lattice", "N")

    @property
    def a(self) -> float:
        a = self.get("lattice", "a")
        return a if a > 0 else 1.0 / self.N


def _toml_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, list):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    if isinstance(v, float):
        return repr(v)
    return str(v)


# ---------------------------------------------------------------- reports


@dataclass
class RunReport:
    command: str
    config: ExperimentConfig
    checks: list = dc_field(default_factory=list)
    timings: dict = dc_field(default_factory=dict)
    extra: dict = dc_field(default_factory=dict)

    def check(self, name, lhs, rhs, defect, tol, **info):
        ok = bool(defect <= tol)
        self.checks.append({"name": name, "lhs": lhs, "rhs": rhs, "defect": defect, "tol": tol,
                            "pass": ok, **info})
        return ok

    @property
    def passed(self) -> bool:
        return all(c["pass"] for c in self.checks)

    def as_dict(self, deterministic: bool):
        d = {"command": self.command, "tool_version": __version__,
             "config_hash": self.config.hash(), "config": self.config.portable(),
             "checks": self.checks, "pass": self.passed, **self.extra}
        d["timings"] = {} if deterministic else self.timings
        return d


def _clean(x):
    """JSON-safe values: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    return x


def write_report(rep: RunReport, out: str, deterministic: bool) -> str:
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, "report.json")
    with open(path, "w") as fh:
        json.dump(_clean(rep.as_dict(deterministic)), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow(["" if v is None else (repr(float(v)) if isinstance(v, float) else v)
                        for v in r])


# ---------------------------------------------------------------- commands


def _entry(cfg: ExperimentConfig, n_override=True):
    spec = cfg.get("run", "entry")
    defaults = {"variant": cfg.get("lattice", "variant"), "lam": cfg.get("lattice", "lambda")}
    name, raw = sf.parse_entry(spec)
    if n_override and name in ("flat_unit", "flat_zero") and "n" not in raw:
        defaults["n"] = cfg.get("geometry", "n")
    return sf.make_entry(spec, **defaults)


def _rule(cfg, pair):
    return va.default_rule(pair, cfg.get("geometry", "quad_order"))


def cmd_verify(cfg, rep, args):
    det = cfg.get("run", "deterministic")
    pair = _entry(cfg)
    h = cfg.get("geometry", "fd_step")
    rng = np.random.default_rng(cfg.get("run", "seed"))
    check = args.check
    tol = args.tol
    if check == "el":
        r = max(sf.el_residual(pair, _rule(cfg, pair)))
        rep.check("el", r, 0.0, r, 1e-3 if tol is None else tol)
    elif check == "bochner":
        m = cfg.get("run", "points")
        X = rng.standard_normal((m, pair.n + 1))
        X /= np.linalg.norm(X, axis=1, keepdims=True)
        for deg in (1, 2):
            psi = sf.random_field(pair, rng, deg, "adj")
            r = float(np.max(sf.bochner_residual(pair, psi, X)))
            rep.check(f"bochner_degree{deg}", r, 0.0, r, 5e-2 if tol is None else tol)
    elif check == "conformal":
        v = args.v if args.v is not None else rng.standard_normal(pair.n + 1)
        r = va.conformal_identity_check(pair, v, _rule(cfg, pair), h, deterministic=det)
        rep.check("conformal", r.lhs, r.rhs, r.defect, 1e-2 if tol is None else tol,
                  v=[float(x) for x in v])
    elif check == "trace":
        r = va.trace_identity_check(pair, _rule(cfg, pair), h, deterministic=det)
        rep.check("trace", r.lhs, r.rhs, abs(r.lhs - r.rhs), 1e-3 if tol is None else tol)
    elif check == "slice":
        v = args.v if args.v is not None else rng.standard_normal(pair.n + 1)
        var = va.killing_variation(pair, v)
        r = va.slice_residual(pair, var, _rule(cfg, pair), 1e-4, deterministic=det)
        rep.check("slice", r, 0.0, r, 1e-4 if tol is None else tol, v=[float(x) for x in v])
    rep.extra["entry"] = cfg.get("run", "entry")


def cmd_spectrum(cfg, rep, args):
    pair = _entry(cfg)
    r = va.rayleigh_min(pair, cfg.get("run", "trials"), _rule(cfg, pair),
                        cfg.get("run", "seed"), cfg.get("geometry", "fd_step"))
    tol = 1e-4 if args.tol is None else args.tol
    rep.check("weakly_stable", r.rayleigh_min, 0.0, max(0.0, -r.rayleigh_min), tol)
    d = r.as_dict()
    d.pop("history")
    rep.extra["spectrum"] = d
    write_csv(os.path.join(cfg.get("run", "out"), "spectrum.csv"), ["trial", "running_min"],
              [(i, float(x)) for i, x in enumerate(r.history)])


def _lattice_state(cfg, seed=None):
    return lat.random_state(cfg.N, cfg.a, cfg.get("lattice", "amp"),
                            cfg.get("run", "seed") if seed is None else seed,
                            cfg.get("lattice", "lambda"), 3, cfg.get("lattice", "variant"))


def _flow_options(cfg):
    f = cfg.values["flow"]
    return lat.FlowOptions(f["step_rule"], f["max_iter"], f["tol"] or None, f["step"],
                           f["precondition"], f["mass"])


def cmd_flow(cfg, rep, args):
    s = lat.load_snapshot(args.state) if args.state else _lattice_state(cfg)
    res = lat.flow_minimize(s, _flow_options(cfg))
    tol = cfg.get("flow", "tol") or 1e-8 * s.sites
    rep.check("converged", res.grad_norm, tol, 0.0 if res.converged else res.grad_norm, 0.0)
    mx = float(np.sqrt(np.max(res.state.norm2_higgs())))
    rep.check("max_abs_higgs", mx, 1.0, max(0.0, mx - 1.0), 1e-6)
    rep.extra["flow"] = res.summary()
    out = cfg.get("run", "out")
    write_csv(os.path.join(out, "energies.csv"), ["iteration", "energy"],
              [(i, float(e)) for i, e in enumerate(res.energies)])
    if args.save:
        lat.save_snapshot(res.state, os.path.join(out, "final.snap"))


def cmd_lattice_check(cfg, rep, args):
    if args.snapshot:
        s = lat.load_snapshot(args.snapshot)
    else:
        s = _lattice_state(cfg)
        rng = np.random.default_rng(cfg.get("run", "seed") + 1)
        s = s.with_fields(s.links + 0.1 * rng.standard_normal(s.links.shape),
                          s.higgs + 0.1 * rng.standard_normal(s.higgs.shape))
    errs = lat.gradient_probes(s, args.probes, cfg.get("run", "seed"))
    rep.check("gradient_probes", max(errs), 0.0, max(errs), 1e-6, probes=len(errs))
    flat = lat.unit_state(cfg.N, cfg.a, cfg.get("lattice", "lambda"), 3,
                          cfg.get("lattice", "variant"))
    g = lat.random_gauge(cfg.N, 3, 0.5, cfg.get("run", "seed"))
    fixed, gr = lat.gauge_fix_coulomb(lat.gauge_transform(flat, g))
    nA = float(np.sqrt(np.sum(fixed.links**2)))
    rep.check("coulomb_flat", nA, 0.0, nA, 1e-6, iterations=gr.iterations)
    _, gs = lat.gauge_fix_coulomb(s)
    rep.check("coulomb_state", gs.max_divergence, 0.0, gs.max_divergence, 1e-8,
              iterations=gs.iterations, bound_ratio=gs.bound_ratio)
    E = lat.discrete_energy(s)
    rep.extra["energy"] = E.as_dict()


def cmd_bubble(cfg, rep, args):
    path = args.sequence or cfg.get("run", "sequence")
    if not path:
        raise ConfigError("bubble needs --sequence <manifest.json>")
    seq = bb.SequenceSpec.from_manifest(path)
    eps1 = cfg.get("lattice", "eps1")
    ladder = cfg.get("bubble", "ladder")
    if not ladder:
        s0 = seq.view(len(seq) - 1)
        ladder = [k * s0.a for k in (2, 4, 8) if k * s0.a <= s0.L / 4]
    run = bb.analyze(seq, ladder, eps1, cfg.get("bubble", "R"), cfg.get("bubble", "delta"))
    L = run.ledger
    rep.check("sigma_bound", len(run.concentration.points), run.concentration.K / eps1 + 1,
              0.0 if run.concentration.bound_ok else 1.0, 0.0)
    rep.check("ledger_closure", L.total, L.base + L.bubble_total + L.neck_total, abs(L.defect),
              1e-9 * max(1.0, abs(L.total)))
    rep.extra["bubble"] = run.as_dict()
    rows = []
    for j, n in enumerate(run.necks):
        for m in n.members:
            rows.append((j, m["index"], m["scale"], m["inner"], m["neck"], m["sup"],
                         m["violated"], m["note"]))
    write_csv(os.path.join(cfg.get("run", "out"), "necks.csv"),
              ["point", "member", "scale", "inner", "neck", "sup", "violated", "note"], rows)


def cmd_catalog(cfg, rep, args):
    listing = sf.catalog_list()
    rep.extra["catalog"] = listing
    print(json.dumps(listing, indent=2, sort_keys=True))


COMMANDS = {"verify": cmd_verify, "spectrum": cmd_spectrum, "flow": cmd_flow,
            "lattice-check": cmd_lattice_check, "bubble": cmd_bubble, "catalog": cmd_catalog}


# ---------------------------------------------------------------- argument parsing


def _floats(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma separated numbers, got {text!r}") from e


def build_parser():
    p = argparse.ArgumentParser(prog="ymh", description="Yang-Mills-Higgs numerical lab")
    p.add_argument("--version", action="version", version=f"ymh {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML config (or a report.json to re-run)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--deterministic", action="store_true", default=None,
                        help="fixed-order reductions, no timings in the report")
    common.add_argument("--seed", type=int)
    common.add_argument("--entry", help="catalog entry, e.g. bpst_scaled:rho=0.5")
    common.add_argument("--N", type=int, help="lattice sites per side")
    common.add_argument("--lam", type=float, help="Higgs coupling lambda")
    common.add_argument("--variant", choices=("fiber", "adjoint"))
    common.add_argument("--tol", type=float, help="override the check tolerance")
    sub = p.add_subparsers(dest="command", required=True)
    v = sub.add_parser("verify", parents=[common], help="pointwise and integral identities")
    v.add_argument("--check", choices=CHECKS, required=True)
    v.add_argument("--v", type=_floats, help="conformal vector (n+1 components)")
    v.add_argument("--n", type=int, help="sphere dimension for flat entries")
    s = sub.add_parser("spectrum", parents=[common], help="Rayleigh minimum on the slice")
    s.add_argument("--trials", type=int)
    f = sub.add_parser("flow", parents=[common], help="lattice gradient flow to a critical point")
    f.add_argument("--state", help="start from a snapshot")
    f.add_argument("--save", action="store_true", help="write the final snapshot")
    f.add_argument("--max-iter", type=int)
    c = sub.add_parser("lattice-check", parents=[common], help="gradient oracle and gauge fixing")
    c.add_argument("--probes", type=int, default=100)
    c.add_argument("--snapshot", help="probe the gradient at a saved state")
    b = sub.add_parser("bubble", parents=[common], help="blow-up analysis of a sequence")
    b.add_argument("--sequence", help="manifest.json (snapshots or generator)")
    b.add_argument("--eps1", type=float)
    b.add_argument("--ladder", type=_floats)
    b.add_argument("--R", type=float)
    b.add_argument("--delta", type=float)
    sub.add_parser("catalog", parents=[common], help="list catalog entries")
    return p


def configure(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
    overrides = [("run", "out", args.out), ("run", "deterministic", args.deterministic),
                 ("run", "seed", args.seed), ("run", "entry", args.entry),
                 ("lattice", "N", args.N), ("lattice", "lambda", args.lam),
                 ("lattice", "variant", args.variant)]
    extra = {"verify": [("geometry", "n", "n")], "spectrum": [("run", "trials", "trials")],
             "flow": [("flow", "max_iter", "max_iter")],
             "bubble": [("lattice", "eps1", "eps1"), ("bubble", "ladder", "ladder"),
                        ("bubble", "R", "R"), ("bubble", "delta", "delta")]}
    for sec, key, attr in extra.get(args.command, []):
        overrides.append((sec, key, getattr(args, attr)))
    for sec, key, val in overrides:
        if val is not None:
            cfg.set(sec, key, val)
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if _threads is not None and not (_threads.strip().isdigit() and int(_threads) > 0):
        print(f"ymh: YMH_THREADS must be a positive integer, got {_threads!r}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = configure(args)
    except (ConfigError, sf.CatalogError) as e:
        print(f"ymh: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"ymh: cannot read config: {e}", file=sys.stderr)
        return EXIT_IO
    rep = RunReport(args.command, cfg)
    det = cfg.get("run", "deterministic")
    out = cfg.get("run", "out")
    t0 = time.perf_counter()
    try:
        os.makedirs(out, exist_ok=True)
        COMMANDS[args.command](cfg, rep, args)
    except (ConfigError, sf.CatalogError, bb.BubblingError, lat.LatticeError,
            va.VariationalError, ge.GeometryError) as e:
        msg = str(e)
        if isinstance(e, bb.BubblingError) and ("cannot read" in msg):
            print(f"ymh: {msg}", file=sys.stderr)
            return EXIT_IO
        print(f"ymh: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"ymh: I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    rep.timings["total_s"] = time.perf_counter() - t0
    try:
        path = write_report(rep, out, det)
    except OSError as e:
        print(f"ymh: cannot write report: {e}", file=sys.stderr)
        return EXIT_IO
    for c in rep.checks:
        print(f"{c['name']}: defect {c['defect']:.3g} (tol {c['tol']:.3g}) "
              f"{'pass' if c['pass'] else 'FAIL'}")
    print(f"report: {path}")
    return EXIT_OK if rep.passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
