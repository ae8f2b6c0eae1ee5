"""Command-line front end: parse a scenario file, solve, verify, write outputs.

Config files are INI documents.  Sections and keys (defaults in brackets)::

    [scenario]      name (required), description
    [cross_section] family [constant] = constant | power_law | tabulated,
                    c0 [1.0], a [0.0], b [0.0], table (path, tabulated only)
    [truncation]    n (required, integer >= 1)
    [lattice]       p_max [6.0], n_axis [16]
    [grid]          mode [homogeneous] = homogeneous | periodic, x_max [4.0], n_axis [8]
    [quadrature]    n_theta [16], n_psi [16]
    [initial]       kind [juttner], beta [1.0], amplitude [1.0], drift [0.0],
                    width [0.5], center [0.0], representation [gridded], truncate [yes]
    [solver]        mode [march] = march | picard_window | none, T [1.0], dt [0.1],
                    tol [1e-8], max_iter [30], conservative [no], checkpoint_every [0],
                    entropy [yes]
    [diagnostics]   checks (comma list, see ``relboltz describe``),
                    conservation_bound [1e-3], h_rtol [0.05], inertia_rtol [0.02],
                    tail_R [1.0], tail_k [2,3,4,5], kernel_R [1.0], kernel_probes [5,10,20,40]
    [run]           seed [0], threads [0 = numba default], output_dir [relboltz_out]

Vectors (``drift``, ``center``) take one number (along z / all axes) or three.
Exit codes: 0 all checks pass, 1 a check failed, 2 usage or config error,
3 runtime error.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import logging
import sys
import warnings
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import diagnostics as dg
from .collision import AngularQuadrature, collision_field
from .errors import ConfigError, NonConvergence, NotApplicable
from .kernels import CrossSectionModel, TruncationParams, check_jiang_condition, load_table
from .phase_space import (MomentumLattice, SpatialGrid, make_initial, truncate_initial,
                          write_checkpoint, write_moments_csv)
from .solver import (SolverConfig, solve_fixed_point, solve_march,
                     trajectory_records)

log = logging.getLogger("relboltz")

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2, 3

_SCHEMA = {
    "scenario": {"name": (str, None), "description": (str, "")},
    "cross_section": {"family": (str, "constant"), "c0": (float, 1.0), "a": (float, 0.0),
                      "b": (float, 0.0), "table": (str, "")},
    "truncation": {"n": (int, None)},
    "lattice": {"p_max": (float, 6.0), "n_axis": (int, 16)},
    "grid": {"mode": (str, "homogeneous"), "x_max": (float, 4.0), "n_axis": (int, 8)},
    "quadrature": {"n_theta": (int, 16), "n_psi": (int, 16)},
    "initial": {"kind": (str, "juttner"), "beta": (float, 1.0), "amplitude": (float, 1.0),
                "drift": ("vec", 0.0), "width": (float, 0.5), "center": ("vec", 0.0),
                "representation": (str, "gridded"), "truncate": (bool, True)},
    "solver": {"mode": (str, "march"), "T": (float, 1.0), "dt": (float, 0.1),
               "tol": (float, 1e-8), "max_iter": (int, 30), "conservative": (bool, False),
               "checkpoint_every": (int, 0), "entropy": (bool, True)},
    "diagnostics": {"checks": ("list", ""), "conservation_bound": (float, 1e-3),
                    "h_rtol": (float, 0.05), "inertia_rtol": (float, 0.02),
                    "tail_R": (float, 1.0), "tail_k": ("floats", "2,3,4,5"),
                    "kernel_R": (float, 1.0), "kernel_probes": ("floats", "5,10,20,40")},
    "run": {"seed": (int, 0), "threads": (int, 0), "output_dir": (str, "relboltz_out")},
}

KNOWN_CHECKS = ("conservation_drift", "inertia_identity", "gronwall_inertia", "h_theorem",
                "entropy_mass_bound", "apriori_moment_bound", "loss_tail_convergence",
                "kernel_conditions")

_RANGES = [
    ("truncation", "n", lambda v: v >= 1, "must be an integer >= 1"),
    ("cross_section", "c0", lambda v: v >= 0, "must be non-negative"),
    ("cross_section", "family", lambda v: v in ("constant", "power_law", "tabulated"),
     "must be constant, power_law or tabulated"),
    ("lattice", "p_max", lambda v: v > 0, "must be positive"),
    ("lattice", "n_axis", lambda v: 2 <= v <= 64, "must lie in [2, 64]"),
    ("grid", "mode", lambda v: v in ("homogeneous", "periodic"), "must be homogeneous or periodic"),
    ("grid", "x_max", lambda v: v > 0, "must be positive"),
    ("grid", "n_axis", lambda v: 2 <= v <= 64, "must lie in [2, 64]"),
    ("quadrature", "n_theta", lambda v: 1 <= v <= 256, "must lie in [1, 256]"),
    ("quadrature", "n_psi", lambda v: 1 <= v <= 256, "must lie in [1, 256]"),
    ("initial", "kind", lambda v: v in ("juttner", "double_juttner", "gaussian_x_juttner_p",
                                        "indicator_box"), "unknown initial-data kind"),
    ("initial", "beta", lambda v: v > 0, "must be positive"),
    ("initial", "amplitude", lambda v: v >= 0, "must be non-negative"),
    ("initial", "width", lambda v: v > 0, "must be positive"),
    ("initial", "representation", lambda v: v in ("gridded", "closed-form"),
     "must be gridded or closed-form"),
    ("solver", "mode", lambda v: v in ("march", "picard_window", "none"),
     "must be march, picard_window or none"),
    ("solver", "T", lambda v: v >= 0, "must be non-negative"),
    ("solver", "dt", lambda v: v > 0, "must be positive"),
    ("solver", "tol", lambda v: v > 0, "must be positive"),
    ("solver", "max_iter", lambda v: v >= 1, "must be >= 1"),
    ("solver", "checkpoint_every", lambda v: v >= 0, "must be >= 0"),
    ("run", "threads", lambda v: v >= 0, "must be >= 0"),
]


@dataclass
class RunConfig:
    """Validated configuration; ``sections`` maps section -> key -> typed value."""

    sections: dict
    model: CrossSectionModel
    source: str = ""
    overrides: dict = field(default_factory=dict)

    def __getitem__(self, section):
        return self.sections[section]

    @property
    def name(self) -> str:
        return self.sections["scenario"]["name"]

    @property
    def checks(self) -> list:
        return self.sections["diagnostics"]["checks"]

    @property
    def output_dir(self) -> Path:
        return Path(self.sections["run"]["output_dir"])

    def truncation(self) -> TruncationParams:
        return TruncationParams(self.sections["truncation"]["n"])

    def lattice(self) -> MomentumLattice:
        s = self.sections["lattice"]
        return MomentumLattice(s["p_max"], s["n_axis"])

    def grid(self) -> SpatialGrid:
        s = self.sections["grid"]
        if s["mode"] == "homogeneous":
            return SpatialGrid()
        return SpatialGrid("periodic", s["x_max"], s["n_axis"])

    def quadrature(self) -> AngularQuadrature:
        s = self.sections["quadrature"]
        return AngularQuadrature(s["n_theta"], s["n_psi"])

    def solver_config(self) -> SolverConfig:
        s = self.sections["solver"]
        return SolverConfig(mode=s["mode"], T=s["T"], dt=s["dt"], tol=s["tol"],
                            max_iter=s["max_iter"], checkpoint_every=s["checkpoint_every"],
                            record_entropy=s["entropy"], conservative=s["conservative"])


def _convert(kind, raw: str):
    raw = raw.strip()
    if kind is str:
        return raw
    if kind is int:
        return int(raw)
    if kind is float:
        return float(raw)
    if kind is bool:
        low = raw.lower()
        if low in ("1", "yes", "true", "on"):
            return True
        if low in ("0", "no", "false", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if kind == "list":
        return [item.strip() for item in raw.split(",") if item.strip()]
    if kind == "floats":
        return [float(item) for item in raw.split(",") if item.strip()]
    if kind == "vec":
        vals = [float(item) for item in raw.replace(",", " ").split()]
        if len(vals) == 1:
            return vals[0]
        if len(vals) == 3:
            return tuple(vals)
        raise ValueError("expected one or three numbers")
    raise AssertionError(kind)


def parse_config(text: str, base_dir=None) -> RunConfig:
    """Parse and validate a scenario file; every problem is reported in one :class:`ConfigError`."""
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError([("<file>", str(exc).splitlines()[0])]) from None
    problems = []
    sections = {}
    for sec in parser.sections():
        if sec not in _SCHEMA:
            problems.append((sec, "unknown section"))
    for sec, keys in _SCHEMA.items():
        values = {}
        present = parser[sec] if parser.has_section(sec) else {}
        for key in present:
            if key not in keys:
                problems.append((f"{sec}.{key}", "unknown key"))
        for key, (kind, default) in keys.items():
            if key in present:
                try:
                    values[key] = _convert(kind, present[key])
                except ValueError as exc:
                    problems.append((f"{sec}.{key}", str(exc)))
            elif default is None:
                problems.append((f"{sec}.{key}", "missing required key"))
            else:
                values[key] = _convert(kind, default) if isinstance(default, str) and kind != str \
                    else default
        sections[sec] = values
    for sec, key, ok, reason in _RANGES:
        if key in sections.get(sec, {}):
            try:
                good = ok(sections[sec][key])
            except TypeError:
                good = False
            if not good:
                problems.append((f"{sec}.{key}", reason))
    for name in sections["diagnostics"].get("checks", []):
        if name not in KNOWN_CHECKS:
            problems.append(("diagnostics.checks", f"unknown check {name!r}"))
    model = None
    cs = sections["cross_section"]
    if not any(k.startswith("cross_section") for k, _ in problems):
        try:
            if cs["family"] == "constant":
                model = CrossSectionModel.constant(cs["c0"])
            elif cs["family"] == "power_law":
                model = CrossSectionModel.power_law(cs["c0"], cs["a"], cs["b"])
            else:
                if not cs["table"]:
                    raise ValueError("tabulated family needs cross_section.table")
                path = Path(cs["table"])
                if not path.is_absolute() and base_dir is not None:
                    path = Path(base_dir) / path
                model = load_table(path)
        except (ValueError, OSError) as exc:
            problems.append(("cross_section.table" if cs["family"] == "tabulated"
                             else "cross_section.family", str(exc)))
    if problems:
        raise ConfigError(problems)
    return RunConfig(sections, model, source=text)


def load_config(path, overrides=None) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError([("<file>", f"cannot read {path}: {exc.strerror}")]) from None
    cfg = parse_config(text, base_dir=path.parent)
    for (sec, key), value in (overrides or {}).items():
        if value is not None:
            cfg.sections[sec][key] = value
    return cfg


# ---------------------------------------------------------------------------
# scenarios

def _scenario_dir():
    return resources.files("relboltz") / "scenarios"


def list_scenarios() -> list:
    return sorted(p.name[:-4] for p in _scenario_dir().iterdir() if p.name.endswith(".ini"))


def scenario_path(name: str) -> Path:
    p = _scenario_dir() / f"{name}.ini"
    if not p.is_file():
        raise KeyError(f"no shipped scenario named {name!r}")
    return Path(str(p))


def describe(name: str) -> str:
    """Explain a diagnostic check or summarise a shipped scenario."""
    if name in dg.CHECKS:
        return f"{name}: {dg.CHECKS[name]}"
    if name == "kernel_conditions":
        return ("kernel_conditions: ball integrals of A(g)/p10 weighted by 1/p0^2 (decreasing "
                "for hard interactions) and by 1/p0 (bounded away from zero).")
    aliases = {"h": "h_theorem", "inertia": "inertia_identity", "gronwall": "gronwall_inertia"}
    if name in aliases:
        return describe(aliases[name])
    if name in list_scenarios():
        cfg = load_config(scenario_path(name))
        desc = cfg["scenario"]["description"] or "(no description)"
        return f"{name}: {desc}\nchecks: {', '.join(cfg.checks) or 'none'}"
    raise KeyError(f"unknown check or scenario {name!r}")


# ---------------------------------------------------------------------------
# running

def _initial_field(cfg: RunConfig):
    s = cfg["initial"]
    lat, grid = cfg.lattice(), cfg.grid()
    params = {"beta": s["beta"], "amplitude": s["amplitude"]}
    if s["kind"] in ("juttner", "double_juttner", "gaussian_x_juttner_p"):
        params["drift"] = s["drift"]
    if s["kind"] == "gaussian_x_juttner_p":
        params.update(width=s["width"], center=s["center"])
    if s["kind"] == "indicator_box":
        params = {"value": s["amplitude"]}
    f0 = make_initial(s["kind"], lat, grid, representation=s["representation"], **params)
    if s["truncate"]:
        f0 = truncate_initial(f0, cfg.truncation())
    return f0


def _kernel_report(cfg: RunConfig, out: Path):
    s = cfg["diagnostics"]
    rep = check_jiang_condition(cfg.model, s["kernel_R"], s["kernel_probes"])
    with open(out / "kernel_conditions.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["p", "jiang", "de", "error"])
        for row in rep.rows():
            w.writerow([repr(row["p"]), repr(row["jiang"]), repr(row["de"]), repr(row["error"])])
    j, d = rep.jiang_values, rep.de_values
    decreasing = all(b < a for a, b in zip(j, j[1:]))
    de_ratio = d[-1] / d[-2] if len(d) >= 2 and d[-2] else float("nan")
    passed = decreasing and 0.8 <= de_ratio <= 1.25
    return dg.VerificationReport(
        "kernel_conditions", "jiang strictly decreasing, de last/penultimate in [0.8, 1.25]",
        de_ratio, passed, 0.0, "ball integrals at the probe momenta",
        {"jiang": j, "de": d, "hard_bound_constant": rep.hard_bound_constant})


def run_scenario(cfg: RunConfig, out_dir=None, stream=None) -> int:
    """Solve and verify one configuration; returns the process exit status."""
    stream = stream or sys.stdout
    out = Path(out_dir) if out_dir is not None else cfg.output_dir
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"error: cannot create output directory {out}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    _set_threads(cfg["run"]["threads"])
    reports = []
    try:
        if "kernel_conditions" in cfg.checks:
            reports.append(_kernel_report(cfg, out))
        mode = cfg["solver"]["mode"]
        if mode != "none":
            reports.extend(_solve_and_check(cfg, out))
    except NonConvergence as exc:
        trace_path = out / "trace.csv"
        if exc.trace is not None:
            exc.trace.write_csv(trace_path)
        print(f"error: {exc}; trace written to {trace_path}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"error: I/O failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ArithmeticError, RuntimeError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    (out / "reports.json").write_text(dg.reports_json(reports) + "\n")
    print(dg.reports_table(reports), file=stream)
    return EXIT_OK if all(r.passed for r in reports) else EXIT_CHECK


def _solve_and_check(cfg: RunConfig, out: Path) -> list:
    model, trunc, quad = cfg.model, cfg.truncation(), cfg.quadrature()
    scfg = cfg.solver_config()
    f0 = _initial_field(cfg)
    if scfg.mode == "march":
        fields, records = solve_march(f0, model, trunc, quad, scfg, checkpoint_dir=out)
    else:
        traj, trace = solve_fixed_point(f0, model, trunc, quad, scfg)
        trace.write_csv(out / "trace.csv")
        fields = traj.fields
        records = trajectory_records(traj, model, trunc, quad, entropy=scfg.record_entropy)
    write_moments_csv(out / "moments.csv", records)
    write_checkpoint(out / "final.rbef", fields[-1])
    run = dg.run_from_fields(fields, records)
    reports = []
    s = cfg["diagnostics"]
    T = scfg.T
    for name in cfg.checks:
        if name == "conservation_drift":
            reports.append(dg.conservation_drift(records, s["conservation_bound"]))
        elif name == "inertia_identity":
            try:
                reports.append(dg.inertia_identity_check(run, s["inertia_rtol"]))
            except NotApplicable as exc:
                log.warning("skipping inertia_identity: %s", exc)
        elif name == "gronwall_inertia":
            reports.append(dg.gronwall_inertia_bound(run, T))
        elif name == "h_theorem":
            gain_scale = None
            if not model.is_zero:
                gain_scale = collision_field(f0, model, trunc, quad).gain_scale
            reports.append(dg.h_theorem_check(records, gain_scale, s["h_rtol"]))
        elif name == "entropy_mass_bound":
            reports.append(dg.entropy_mass_bound(run, T, f0))
        elif name == "apriori_moment_bound":
            reports.append(dg.apriori_moment_bound(run, T, f0))
        elif name == "loss_tail_convergence":
            reports.append(dg.loss_tail_convergence(f0, model, trunc, s["tail_R"], s["tail_k"],
                                                    quad))
    return reports


def _set_threads(n: int) -> None:
    if n <= 0:
        return
    import numba

    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


# ---------------------------------------------------------------------------
# entry point

def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--output-dir", help="directory for CSV, checkpoints and reports")
    common.add_argument("--threads", type=int, help="worker threads for the collision kernels")
    common.add_argument("--seed", type=int, help="seed for every random choice")
    ap = argparse.ArgumentParser(prog="relboltz", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", parents=[common], help="solve a scenario and run its checks")
    p_run.add_argument("config", help="config file or shipped scenario name")
    p_kernel = sub.add_parser("check-kernel", parents=[common],
                              help="evaluate the kernel conditions only")
    p_kernel.add_argument("config", help="config file or shipped scenario name")
    sub.add_parser("list", help="list shipped scenarios")
    p_desc = sub.add_parser("describe", help="explain a check or scenario")
    p_desc.add_argument("name")
    return ap


def _resolve(config: str) -> Path:
    p = Path(config)
    if p.is_file():
        return p
    try:
        return scenario_path(config)
    except KeyError:
        raise ConfigError([("<file>", f"no such file or shipped scenario: {config}")]) from None


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    # numba probes an optional TBB layer and warns when the installed one is old
    warnings.filterwarnings("ignore", message="The TBB threading layer")
    ap = _build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    if args.command == "list":
        print("\n".join(list_scenarios()))
        return EXIT_OK
    if args.command == "describe":
        try:
            print(describe(args.name))
        except KeyError as exc:
            print(f"error: {exc.args[0]}", file=sys.stderr)
            return EXIT_USAGE
        return EXIT_OK
    try:
        cfg = load_config(_resolve(args.config), {
            ("run", "output_dir"): args.output_dir,
            ("run", "threads"): args.threads,
            ("run", "seed"): args.seed,
        })
    except ConfigError as exc:
        for key, reason in exc.problems:
            print(f"config error: {key}: {reason}", file=sys.stderr)
        return EXIT_USAGE
    np.random.seed(cfg["run"]["seed"])
    if args.command == "check-kernel":
        cfg.sections["solver"]["mode"] = "none"
        cfg.sections["diagnostics"]["checks"] = ["kernel_conditions"]
    return run_scenario(cfg)


if __name__ == "__main__":
    sys.exit(main())
