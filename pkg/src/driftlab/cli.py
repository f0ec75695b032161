"""Command-line front end.

Each subcommand reads a TOML config (``--config PATH``, ``-`` for stdin, or the
shipped default), writes CSV/JSON reports into ``--out`` and exits with 0 on
success, 1 when a scientific assertion fails and 2 on usage or parse errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from importlib import resources
from pathlib import Path

import numpy as np
import tomli

from . import counterexamples as cx
from . import identities as ids
from .field import field_grid_report
from .grammar import GrammarError
from .kernels import companion_eval, kernel_eval, parse_kernel
from .measures import PowerLawDensity, discretize_density, parse_measure, satellite
from .reports import config_hash, fmt, to_jsonable
from .stability import AnchorObservable, anchor_check, drift_simulate, overlap_scalar

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
COMMANDS = ("identities", "satellite", "tilt", "field", "anchor", "simulate")


class ConfigError(ValueError):
    """A config value is missing or malformed; the message names the field."""


class Config:
    """Dotted-path access into a parsed TOML document with field-naming errors."""

    def __init__(self, data: dict, text: str, base_dir: Path):
        self.data = data
        self.text = text
        self.base_dir = base_dir

    def get(self, path: str, kind=None, default=...):
        node = self.data
        for key in path.split("."):
            if not isinstance(node, dict) or key not in node:
                if default is not ...:
                    return default
                raise ConfigError(f"{path}: missing required field")
            node = node[key]
        if kind is None:
            return node
        try:
            if kind is int and (isinstance(node, bool) or int(node) != node):
                raise ValueError("not an integer")
            if kind in (int, float) and isinstance(node, bool):
                raise ValueError("not a number")
            return kind(node)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{path}: expected {kind.__name__}, got {node!r}") from exc

    def kernel(self):
        text = self.get("kernel", str)
        try:
            return parse_kernel(text, self.get("dim", int, None))
        except (GrammarError, ValueError) as exc:
            raise ConfigError(f"kernel: {exc}") from exc

    def measure(self, path: str, dim: int):
        text = self.get(path, str)
        try:
            return parse_measure(text, dim, self.base_dir)
        except (GrammarError, ValueError, OSError) as exc:
            raise ConfigError(f"{path}: {exc}") from exc

    def lattice(self, path: str, dim: int) -> np.ndarray:
        g = self.get(path, dict)
        try:
            return cx.lattice(float(g["lo"]), float(g["hi"]), float(g["spacing"]), dim)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"{path}: expected {{lo, hi, spacing}} with lo < hi, spacing > 0 ({exc})") from exc

    def vector(self, path: str, dim: int) -> np.ndarray:
        v = np.atleast_1d(np.asarray(self.get(path), dtype=float))
        if v.shape != (dim,) or not np.all(np.isfinite(v)):
            raise ConfigError(f"{path}: expected a finite vector of length {dim}")
        return v


def load_config(path: str | None, command: str) -> Config:
    if path is None:
        text = resources.files("driftlab").joinpath("configs", f"{command}.toml").read_text()
        base = Path.cwd()
    elif path == "-":
        text, base = sys.stdin.read(), Path.cwd()
    else:
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError(f"--config: cannot read {path}: {exc}") from exc
        base = p.parent
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"config: {exc}") from exc
    return Config(data, text, base)


class Output:
    def __init__(self, out_dir: str, cfg: Config, seed: int | None, command: str):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.meta = {
            "command": command,
            "config_sha256": config_hash(cfg.text + ("" if seed is None else f"\n#seed={seed}")),
            "seed": seed,
        }

    def json(self, name: str, payload: dict) -> Path:
        path = self.dir / name
        path.write_text(json.dumps(to_jsonable({**self.meta, **payload}), indent=2, sort_keys=True) + "\n")
        return path

    def text(self, name: str, content: str) -> Path:
        path = self.dir / name
        path.write_text(content)
        return path

    def rows(self, name: str, header: list, rows) -> Path:
        path = self.dir / name
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([fmt(v) for v in r])
        return path


def _seed(args, cfg: Config) -> int:
    return args.seed if args.seed is not None else cfg.get("seed", int, 0)


# -- subcommands -------------------------------------------------------------------


def cmd_identities(args, cfg: Config) -> int:
    spec = cfg.kernel()
    d = spec.dim
    seed = _seed(args, cfg)
    out = Output(args.out, cfg, seed, "identities")
    p = cfg.measure("identities.p", d)
    q = cfg.measure("identities.q", d) if "q" in cfg.get("identities", dict) else p
    n_points = cfg.get("identities.points", int, 10)
    if n_points < 1:
        raise ConfigError("identities.points: must be at least 1")
    checks = cfg.get("identities.checks", list, ["gradient", "elliptic", "barycenter", "gradient_bound", "spectral", "axioms"])
    unknown = set(checks) - {"gradient", "elliptic", "barycenter", "gradient_bound", "spectral", "axioms"}
    if unknown:
        raise ConfigError(f"identities.checks: unknown check(s) {sorted(unknown)}")
    rng = np.random.default_rng(seed)
    centre = p.atoms[rng.integers(p.size, size=n_points)]
    pts = centre + rng.normal(scale=2.0 * spec.length_scale, size=(n_points, d))

    reports, skipped = [], []
    for name in checks:
        if name == "gradient":
            reports.append(ids.check_gradient_identity(spec, p, pts))
        elif name == "elliptic":
            reports.append(ids.check_elliptic_identity(spec, p, pts))
        elif name == "barycenter":
            reports.append(ids.check_barycenter_identity(spec, p, pts))
        elif name == "gradient_bound":
            if spec.family != "laplace":
                skipped.append({"check": "gradient_bound", "reason": f"applies to Laplace kernels only, kernel is {spec.family}"})
                continue
            reports.append(ids.check_gradient_bound(spec, p, pts))
        elif name == "spectral":
            xi = cfg.get("identities.xi", dict, {"lo": -5.0, "hi": 5.0, "count": 21})
            try:
                axis = np.linspace(float(xi["lo"]), float(xi["hi"]), int(xi["count"]))
            except (KeyError, TypeError, ValueError) as exc:
                raise ConfigError(f"identities.xi: expected {{lo, hi, count}} ({exc})") from exc
            xis = axis[:, None] if d == 1 else np.outer(axis, np.ones(d) / math.sqrt(d))
            reports.append(ids.check_spectral(spec, xis))
        elif name == "axioms":
            if not (p.is_probability and q.is_probability):
                skipped.append({"check": "axioms", "reason": "field axioms need probability measures"})
                continue
            reports.append(ids.check_field_axioms(spec, p, q, pts))
    ok = all(r.passed for r in reports)
    out.json("identities_report.json", {"kernel": str(spec), "pass": ok, "reports": [r.to_dict() for r in reports], "skipped": skipped})
    for r in reports:
        print(f"{r.check:<22} {'PASS' if r.passed else 'FAIL'}  max_rel={r.max_rel:.3e}  tol={r.tolerance:g}")
    for s in skipped:
        print(f"{s['check']:<22} SKIP  {s['reason']}")
    return EXIT_OK if ok else EXIT_FAIL


def _satellite_positions(cfg: Config, section: str, d: int) -> np.ndarray:
    if cfg.get(f"{section}.positions", None, None) is not None:
        z = np.asarray(cfg.get(f"{section}.positions"), dtype=float).reshape(-1, d)
    else:
        direction = cfg.vector(f"{section}.direction", d)
        spacing = cfg.get(f"{section}.spacing", float)
        count = cfg.get(f"{section}.count", int)
        if count < 1:
            raise ConfigError(f"{section}.count: must be at least 1")
        z = np.outer(np.arange(1, count + 1) * spacing, direction)
    if np.any(np.diff(np.linalg.norm(z, axis=1)) <= 0):
        raise ConfigError(f"{section}: satellite norms must be strictly increasing")
    return z


def cmd_satellite(args, cfg: Config) -> int:
    spec = cfg.kernel()
    d = spec.dim
    out = Output(args.out, cfg, args.seed, "satellite")
    base = cfg.measure("satellite.base", d)
    try:
        sched = cx.SatelliteSchedule(base, cfg.get("satellite.eps", float), _satellite_positions(cfg, "satellite", d), cfg.lattice("satellite.grid", d))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"satellite: {exc}") from exc
    rep = cx.satellite_experiment(spec, sched, threads=args.threads)
    out.text("satellite.csv", rep.to_csv())
    out.json("satellite_report.json", rep.to_dict())
    _print_report(rep)
    return EXIT_OK if rep.passed else EXIT_FAIL


def cmd_tilt(args, cfg: Config) -> int:
    spec = cfg.kernel()
    d = spec.dim
    seed = _seed(args, cfg)
    out = Output(args.out, cfg, seed, "tilt")
    n_values = cfg.get("tilt.n_values", list)
    if any(not isinstance(n, int) or n < 1 for n in n_values) or any(b <= a for a, b in zip(n_values, n_values[1:])) or not n_values:
        raise ConfigError(f"tilt.n_values: must be strictly increasing positive integers, got {n_values}")
    lam = cfg.get("tilt.lambda", float, 0.75 / spec.length_scale)
    try:
        sched = cx.TiltSchedule(
            m=cfg.get("tilt.m", float, d + 2.0),
            dim=d,
            n_values=tuple(n_values),
            eval_grid=cfg.lattice("tilt.grid", d),
            lam=lam,
            nodes=cfg.get("tilt.nodes", int, 8000 if d == 1 else 400),
            n_theta=cfg.get("tilt.n_theta", int, 64),
            r_max=cfg.get("tilt.r_max", float, None),
            probe_seed=seed,
        )
        rep = cx.tilt_experiment(spec, sched)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"tilt: {exc}") from exc
    out.text("tilt.csv", rep.to_csv())
    out.json("tilt_report.json", rep.to_dict())
    _print_report(rep)
    return EXIT_OK if rep.passed else EXIT_FAIL


def cmd_field(args, cfg: Config) -> int:
    spec = cfg.kernel()
    d = spec.dim
    out = Output(args.out, cfg, args.seed, "field")
    p = cfg.measure("field.p", d)
    q = cfg.measure("field.q", d)
    grid = cfg.lattice("field.grid", d)
    rep = field_grid_report(spec, p, q, grid, threads=args.threads)
    out.text("field.csv", rep.to_csv())
    out.json("field_report.json", {"kernel": str(spec), "sup_norm": rep.sup_norm, "argmax": rep.argmax, "grid_points": len(grid), "pass": True})
    print(f"sup |V| = {rep.sup_norm:.17g} at x = {rep.argmax.tolist()}")
    return EXIT_OK


def _anchor_sequence(cfg: Config, spec, p, d: int):
    kind = cfg.get("anchor.sequence.kind", str)
    if kind == "satellite":
        eps = cfg.get("anchor.sequence.eps", float)
        try:
            return p, [satellite(p, eps, z) for z in _satellite_positions(cfg, "anchor.sequence", d)], None
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"anchor.sequence: {exc}") from exc
    if kind == "measures":
        items = cfg.get("anchor.sequence.items", list)
        return p, [cfg_measure_text(cfg, f"anchor.sequence.items[{i}]", t, d) for i, t in enumerate(items)], None
    if kind == "refine":
        m = cfg.get("anchor.sequence.m", float, d + 2.0)
        nodes = cfg.get("anchor.sequence.nodes", list)
        r_max = cfg.get("anchor.sequence.r_max", float, None)
        if not nodes or any(not isinstance(n, int) or n < 1 for n in nodes):
            raise ConfigError("anchor.sequence.nodes: expected a list of positive integers")
        try:
            dens = PowerLawDensity(m, d)
            ref = discretize_density(dens, r_max=r_max, nodes=max(nodes))
            discs = [discretize_density(dens, r_max=r_max, nodes=n) for n in nodes]
        except ValueError as exc:
            raise ConfigError(f"anchor.sequence: {exc}") from exc
        return ref.measure.normalized(), [q.measure.normalized() for q in discs], (ref, discs)
    raise ConfigError(f"anchor.sequence.kind: expected satellite, measures or refine, got {kind!r}")


def _refine_tolerance(spec, kind: str, refine, window: int) -> float:
    """Discretisation slack for a refine sequence.

    Each discretisation integrates test functions with ``|f| <= 1`` and
    ``Lip(f) <= 1`` to within its ``quadrature_error`` (plus the truncated and
    renormalised mass), and every observable integrates a bounded Lipschitz
    profile (``kappa`` or ``eta``) against the sequence.  The profile's sup and
    Lipschitz constant are taken from a fine radial grid, inflated by 5%.
    """
    ref, discs = refine
    ell = spec.length_scale
    r = np.linspace(0.0, 40.0 * ell, 40001)
    z = np.zeros((len(r), spec.dim))
    z[:, 0] = r
    prof = np.asarray(companion_eval(spec, z) if kind == "companion_section" else kernel_eval(spec, z), dtype=float)
    scale = 1.05 * max(float(prof.max()), float(np.max(np.abs(np.diff(prof)) / np.diff(r))))
    err = lambda disc: disc.quadrature_error + 2.0 * disc.truncation_bound
    return scale * (err(ref) + max(err(q) for q in discs[-window:]))


def cfg_measure_text(cfg: Config, label: str, text, d: int):
    try:
        return parse_measure(str(text), d, cfg.base_dir)
    except (GrammarError, ValueError, OSError) as exc:
        raise ConfigError(f"{label}: {exc}") from exc


def cmd_anchor(args, cfg: Config) -> int:
    spec = cfg.kernel()
    d = spec.dim
    out = Output(args.out, cfg, args.seed, "anchor")
    p = cfg.measure("anchor.p", d) if cfg.get("anchor.sequence.kind", str) != "refine" else None
    p, seq, refine = _anchor_sequence(cfg, spec, p, d)
    kind = cfg.get("anchor.observable", str, "overlap")
    point = cfg.vector("anchor.point", d) if cfg.get("anchor.point", None, None) is not None else None
    try:
        obs = AnchorObservable.for_target(kind, spec, p, point)
    except ValueError as exc:
        raise ConfigError(f"anchor.observable: {exc}") from exc
    window = cfg.get("anchor.window", int, None)
    if cfg.get("anchor.tol", None, 1e-12) == "auto":
        if refine is None:
            raise ConfigError("anchor.tol: 'auto' needs a refine sequence")
        tol = _refine_tolerance(spec, kind, refine, window or math.ceil(0.25 * len(seq)))
    else:
        tol = cfg.get("anchor.tol", float, 1e-12)
    try:
        verdict = anchor_check(spec, p, seq, obs, tol=tol, window=window)
    except ValueError as exc:
        raise ConfigError(f"anchor.window: {exc}") from exc
    expect = cfg.get("anchor.expect", str, "PASS").upper()
    if expect not in ("PASS", "FAIL"):
        raise ConfigError(f"anchor.expect: expected PASS or FAIL, got {expect!r}")
    out.rows("anchor_trajectory.csv", ["n", "value"], enumerate(verdict.values, start=1))
    out.json("anchor_report.json", {"kernel": str(spec), **verdict.to_dict(), "point": point, "expect": expect, "pass": verdict.verdict == expect})
    print(f"anchor {kind}: reference={verdict.reference_value:.17g} liminf proxy={verdict.proxy:.17g} window={verdict.window} -> {verdict.verdict} (expected {expect})")
    return EXIT_OK if verdict.verdict == expect else EXIT_FAIL


def cmd_simulate(args, cfg: Config) -> int:
    spec = cfg.kernel()
    d = spec.dim
    seed = _seed(args, cfg)
    out = Output(args.out, cfg, seed, "simulate")
    p = cfg.measure("simulate.p", d)
    spec_particles = cfg.get("simulate.particles")
    if isinstance(spec_particles, dict):
        if spec_particles.get("at_atoms"):
            x0 = p.atoms.copy()
        else:
            count = cfg.get("simulate.particles.count", int)
            center = cfg.vector("simulate.particles.center", d)
            spread = cfg.get("simulate.particles.spread", float, 0.0)
            if count < 1 or spread < 0:
                raise ConfigError("simulate.particles: need count >= 1 and spread >= 0")
            x0 = center + spread * np.random.default_rng(seed).normal(size=(count, d))
    else:
        try:
            x0 = np.asarray(spec_particles, dtype=float).reshape(-1, d)
        except ValueError as exc:
            raise ConfigError(f"simulate.particles: {exc}") from exc
    steps = cfg.get("simulate.steps", int)
    step_size = cfg.get("simulate.step_size", float, 0.5)
    try:
        res = drift_simulate(spec, p, x0, steps, step_size, threads=args.threads)
    except ValueError as exc:
        raise ConfigError(f"simulate: {exc}") from exc
    coord = [f"x_{k + 1}" for k in range(d)]
    out.rows("trajectory.csv", ["step", "particle", *coord], res.trajectory_rows())
    anchor_cols = [f"anchor_{k}" for k in range(res.anchors.shape[1])]
    out.rows("diagnostics.csv", ["step", "overlap", *anchor_cols, "field_sup"], res.diagnostics_rows())
    disp = np.abs(np.diff(res.trajectory, axis=0))
    out.json(
        "simulate_report.json",
        {
            "kernel": str(spec),
            "steps": steps,
            "step_size": step_size,
            "particles": len(x0),
            "anchor_points": res.anchor_points,
            "max_displacement": float(disp.max()) if disp.size else 0.0,
            "final_overlap": float(res.overlap[-1]),
            "target_overlap": overlap_scalar(spec, p, p),
            "field_sup_final": float(res.field_sup[-1]),
            "pass": True,
            **res.notes,
        },
    )
    print(f"simulated {len(x0)} particles for {steps} steps; final field sup on grid = {res.field_sup[-1]:.3e}")
    return EXIT_OK


def _print_report(rep) -> None:
    for a in rep.assertions:
        print(f"{a.name:<30} {'PASS' if a.passed else 'FAIL'}  {a.detail}")


HANDLERS = {
    "identities": cmd_identities,
    "satellite": cmd_satellite,
    "tilt": cmd_tilt,
    "field": cmd_field,
    "anchor": cmd_anchor,
    "simulate": cmd_simulate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="driftlab", description="Drift-field identities, counterexamples and stability diagnostics.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, help=(HANDLERS[name].__doc__ or name).strip().splitlines()[0] if HANDLERS[name].__doc__ else None)
        sp.add_argument("--config", default=None, help="TOML config path, '-' for stdin (default: shipped config)")
        sp.add_argument("--out", default="driftlab-out", help="output directory")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--threads", type=int, default=1, help="worker threads for grid evaluation")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_USAGE
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = load_config(args.config, args.command)
        return HANDLERS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
