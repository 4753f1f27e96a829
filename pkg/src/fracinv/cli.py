"""Command-line front end.

Usage::

    fracinv --kind forward --config run.toml --out results/ --seed 7 --workers 4

The config is a TOML document with one flat table per module (``[layout]``,
``[system]``, ``[source]``, ``[inverse]``, ``[verify]``); every key is
optional.  Each run writes ``manifest.json`` (config echo, versions, wall
time, sha256 of every output), data CSVs at 17 significant digits and
``summary.json``.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import __version__
from . import experiments as ex
from .domain import build_layout
from .forward import SolverError, SourceTerm, SystemSpec, solve_space_nonlocal, solve_time_fractional
from .fractime import FracOrderSpec
from .inverse.adjoint import solve_adjoint_space, solve_adjoint_time
from .inverse.interaction import UnresolvedCoefficientsError
from .inverse.orders import recover_orders
from .inverse.report import _jsonable
from .linearize import linearize
from .measure import MeasurementWeight, observe_point
from .models import PRESETS, build_preset
from .nonlocal_op import KernelSpec
from .verify import run_suite

KINDS = ("forward", "adjoint", "linearize", "invert-potential", "invert-interaction", "invert-order", "verify")

SCHEMA = {
    "run": {"kind": str, "seed": int, "workers": int, "out": str},
    "layout": {"dim": int, "n_interior": int, "collar_width": float, "accessible": str, "gamma": str, "t_final": float, "n_time": int},
    "system": {"preset": str, "params": dict, "which": str, "n_species": int, "potential": (float, list), "kernel": list,
               "orders": list, "alpha": (float, list), "d": (float, list), "interaction": list, "allow_positive": bool},
    "source": {"amplitude": float, "profile": str, "time": str},
    "inverse": {"which": str, "basis_size": int, "noise": float, "lambda": float, "n_terms": int, "truth": list},
    "verify": {"acceptance": bool},
}


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


@dataclass
class RunConfig:
    kind: str = "verify"
    seed: int = 0
    workers: int = 1
    out: Path = Path("fracinv_out")
    tables: dict = field(default_factory=dict)

    def get(self, table: str, key: str, default=None):
        return self.tables.get(table, {}).get(key, default)

    def echo(self) -> dict:
        return {"kind": self.kind, "seed": self.seed, "workers": self.workers, "out": str(self.out), **self.tables}


def _check_type(path: str, value, expected) -> None:
    expected = expected if isinstance(expected, tuple) else (expected,)
    if float in expected and isinstance(value, int) and not isinstance(value, bool):
        return
    if not isinstance(value, expected) or (bool not in expected and isinstance(value, bool)):
        names = " or ".join(t.__name__ for t in expected)
        raise ConfigError(f"config field {path}: expected {names}, got {type(value).__name__}")


def load_config(path: str | Path | None, args: argparse.Namespace | None = None) -> RunConfig:
    """Parse and validate a config file; command-line flags override its values."""
    tables: dict = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                tables = tomllib.load(fh)
        except tomllib.TOMLDecodeError as err:
            raise ConfigError(f"config file {path}: {err}") from err
    for name, body in tables.items():
        if name not in SCHEMA:
            raise ConfigError(f"config field [{name}]: unknown table (expected one of {', '.join(SCHEMA)})")
        if not isinstance(body, dict):
            raise ConfigError(f"config field [{name}]: must be a table")
        for key, value in body.items():
            if key not in SCHEMA[name]:
                raise ConfigError(f"config field {name}.{key}: unknown key")
            _check_type(f"{name}.{key}", value, SCHEMA[name][key])
    run = tables.pop("run", {})
    cfg = RunConfig(run.get("kind", "verify"), run.get("seed", 0), run.get("workers", 1), Path(run.get("out", "fracinv_out")), tables)
    if args is not None:
        for key in ("kind", "seed", "workers"):
            if getattr(args, key) is not None:
                setattr(cfg, key, getattr(args, key))
        if args.out is not None:
            cfg.out = Path(args.out)
    if cfg.kind not in KINDS:
        raise ConfigError(f"config field run.kind: {cfg.kind!r} is not one of {', '.join(KINDS)}")
    if not 0 <= cfg.seed < 2**64:
        raise ConfigError("config field run.seed: must be an unsigned 64-bit integer")
    if cfg.workers < 1:
        raise ConfigError("config field run.workers: must be at least 1")
    preset = cfg.get("system", "preset")
    if preset is not None and preset not in PRESETS:
        raise ConfigError(f"config field system.preset: unknown preset {preset!r}")
    for table, key in (("system", "which"), ("inverse", "which")):
        if cfg.get(table, key, "time") not in ("space", "time"):
            raise ConfigError(f"config field {table}.{key}: must be 'space' or 'time'")
    return cfg


# --- building blocks from config ---------------------------------------------


def layout_from(cfg: RunConfig):
    L = cfg.tables.get("layout", {})
    try:
        return build_layout(
            L.get("dim", 1), L.get("n_interior", 32), L.get("collar_width"), L.get("accessible", "right"),
            L.get("gamma", "left"), L.get("t_final", 1.0), L.get("n_time", 64),
        )
    except ValueError as err:
        raise ConfigError(f"config field [layout]: {err}") from err


def system_from(cfg: RunConfig, layout) -> SystemSpec:
    S = cfg.tables.get("system", {})
    try:
        if "preset" in S:
            return build_preset(S["preset"], layout, allow_positive=S.get("allow_positive", False), **S.get("params", {}))
        M = S.get("n_species", 1)
        pot = np.broadcast_to(np.asarray(S.get("potential", -0.5), dtype=float), (M, layout.n_int)).copy()
        inter: dict = {}
        for k, entry in enumerate(S.get("interaction", [])):
            if not isinstance(entry, dict) or not {"species", "index", "coef"} <= set(entry):
                raise ConfigError(f"config field system.interaction[{k}]: needs species, index and coef")
            inter.setdefault(int(entry["species"]), {})[tuple(entry["index"])] = float(entry["coef"])
        kernel = KernelSpec(tuple(tuple(t) for t in S.get("kernel", [[0.5, 1.0]])))
        orders = S.get("orders", [[[0.5, 1.0]]] * M)
        frac = FracOrderSpec(tuple(tuple(tuple(t) for t in sp) for sp in orders))
        alpha = np.broadcast_to(np.asarray(S.get("alpha", 0.0), dtype=float), (M, layout.dim))
        return SystemSpec(M, pot, interaction=inter, alpha=alpha, d=S.get("d", 1.0), kernel=kernel, frac=frac,
                          allow_positive_potential=S.get("allow_positive", False))
    except ConfigError:
        raise
    except (ValueError, TypeError, IndexError) as err:
        raise ConfigError(f"config field [system]: {err}") from err


def source_from(cfg: RunConfig, layout, M: int) -> SourceTerm:
    S = cfg.tables.get("source", {})
    x = layout.interior_coords()
    profiles = {"sin": np.prod(np.sin(np.pi * x), axis=1), "one": np.ones(layout.n_int), "bump": np.prod(16 * (x * (1 - x)) ** 2, axis=1)}
    times = {"one": np.ones(layout.n_time + 1), "t": layout.times, "decay": np.exp(-layout.times)}
    prof, tprof = S.get("profile", "sin"), S.get("time", "one")
    if prof not in profiles:
        raise ConfigError(f"config field source.profile: choose from {', '.join(profiles)}")
    if tprof not in times:
        raise ConfigError(f"config field source.time: choose from {', '.join(times)}")
    q = S.get("amplitude", 1.0) * np.outer(times[tprof], profiles[prof])
    return SourceTerm(np.broadcast_to(q, (M, *q.shape)).copy())


# --- output helpers ----------------------------------------------------------


def _write_rows(path: Path, header: list[str], rows) -> Path:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([v if isinstance(v, str) else f"{v:.17g}" for v in row])
    return path


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _outcome_rows(outcomes):
    return [[o.name, "pass" if o.passed else "fail", "; ".join(f"{k}={ex._fmt(v)}" for k, v in o.values.items())] for o in outcomes]


# --- kinds -------------------------------------------------------------------


def run_forward(cfg: RunConfig, out: Path) -> tuple[list[Path], dict, int]:
    layout = layout_from(cfg)
    spec = system_from(cfg, layout)
    which = cfg.get("system", "which", "time")
    q = source_from(cfg, layout, spec.n_species)
    sol = (solve_space_nonlocal if which == "space" else solve_time_fractional)(spec, q, layout)
    sol.to_csv(out / "state.csv", layout)
    series = observe_point(sol, layout)
    rows = [[m + 1, layout.times[m + 1], *series[:, m]] for m in range(layout.n_time)]
    files = [out / "state.csv", _write_rows(out / "point_series.csv", ["step", "t", *[f"u{i}" for i in range(spec.n_species)]], rows)]
    summary = {"min_u": sol.min_value(), "max_u": float(sol.u.max()), "picard_iterations_max": int(np.max(sol.iterations)), "warnings": list(spec.warnings)}
    return files, summary, 0


def run_adjoint(cfg: RunConfig, out: Path):
    layout = layout_from(cfg)
    spec = system_from(cfg, layout)
    which = cfg.get("system", "which", "time")
    P = spec.potential_at(layout)
    if which == "space":
        h = MeasurementWeight.build(layout, spec.n_species, "accessible", space_profile=ex.bump_on_collar(layout))
        adj = solve_adjoint_space(P, h, layout, spec.kernel, spec.alpha)
    else:
        h = MeasurementWeight.build(layout, spec.n_species, "gamma")
        adj = solve_adjoint_time(P, h, layout, spec.frac, spec.d, spec.alpha)
    w = adj.interior(layout)
    x = layout.interior_coords()
    rows = [[i, m, layout.times[m], k, *x[k], w[i, m, k]] for i in range(w.shape[0]) for m in range(w.shape[1]) for k in range(w.shape[2])]
    coords = ["x", "y"][: layout.dim]
    path = _write_rows(out / "adjoint.csv", ["species", "step", "t", "node", *coords, "value"], rows)
    return [path], {"min_w_before_T": float(w[:, :-1].min()), "max_w": float(w.max())}, 0


def run_linearize(cfg: RunConfig, out: Path):
    layout, spec, fam = ex.linearization_setup()
    which = cfg.get("system", "which", "time")
    bundle = linearize(spec, fam, layout, which, order=2)
    x = layout.interior_coords()[:, 0]
    I = layout.interior_index
    rows = []
    for labels, u in sorted(bundle.fields.items()):
        tag = "-".join(map(str, labels))
        for i in range(u.shape[0]):
            for k in range(x.size):
                rows.append([tag, i, k, x[k], u[i, -1, I[k]]])
    path = _write_rows(out / "linearized_final.csv", ["labels", "species", "node", "x", "value"], rows)
    check = ex.linearization()
    return [path], {"slopes": check.values, "passed": check.passed}, 0


def run_invert_potential(cfg: RunConfig, out: Path):
    which = cfg.get("inverse", "which", "space")
    if which == "space":
        rep = ex.space_potential(cfg.get("inverse", "noise", 0.0), cfg.seed, cfg.get("inverse", "basis_size", 32), cfg.workers, cfg.get("inverse", "lambda"))
    else:
        rep = ex.time_potential(n=cfg.get("inverse", "basis_size", 32))
    json_path = rep.to_json(out, "potential")
    files = [json_path] + [out / f"potential_{n}.csv" for n in (*rep.fields, *(["guard_mask"] if rep.guard_mask is not None else []))]
    return files, {"errors": rep.errors, "masked_fraction": rep.masked_fraction, "lambda": rep.meta.get("lambda", rep.meta.get("lambda_v"))}, 0


def run_invert_interaction(cfg: RunConfig, out: Path):
    rep = ex.interaction(cfg.get("inverse", "which", "time"))
    json_path = rep.to_json(out, "interaction")
    return [json_path, out / "interaction_coefficients.csv"], {"errors": rep.errors, "recovered": {str(k): {",".join(map(str, kk)): v for kk, v in t.items()} for k, t in rep.meta["recovered"].items()}}, 0


def run_invert_order(cfg: RunConfig, out: Path):
    truth = tuple(cfg.get("inverse", "truth", [0.5]))
    n_terms = cfg.get("inverse", "n_terms", len(truth))
    frac = FracOrderSpec((tuple((float(b), 1.0) for b in truth),))
    layout, p, probe, series = ex.order_series(frac)
    noise = cfg.get("inverse", "noise", 0.0)
    if noise:
        rng = np.random.default_rng(cfg.seed)
        series = series * (1 + noise * rng.standard_normal(series.shape))
    rep = recover_orders(series, probe, layout, p, n_terms=n_terms, truth=truth if len(truth) == n_terms else None)
    json_path = rep.to_json(out, "orders")
    return [json_path, out / "orders_beta.csv", out / "orders_b.csv"], {"errors": rep.errors, "beta": rep.fields["beta"].tolist(), "b": rep.fields["b"].tolist()}, 0


def run_verify(cfg: RunConfig, out: Path):
    outcomes = run_suite(acceptance=cfg.get("verify", "acceptance", False))
    path = _write_rows(out / "verify.csv", ["check", "status", "values"], _outcome_rows(outcomes))
    failed = [o.name for o in outcomes if not o.passed]
    return [path], {"checks": len(outcomes), "failed": failed}, 1 if failed else 0


RUNNERS = {
    "forward": run_forward, "adjoint": run_adjoint, "linearize": run_linearize, "invert-potential": run_invert_potential,
    "invert-interaction": run_invert_interaction, "invert-order": run_invert_order, "verify": run_verify,
}


def run(cfg: RunConfig) -> int:
    """Execute one configured run; returns the process exit status."""
    out = cfg.out
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as err:
        raise ConfigError(f"config field run.out: cannot create {out}: {err}") from err
    t0 = time.perf_counter()
    files, summary, status = RUNNERS[cfg.kind](cfg, out)
    summary = {"kind": cfg.kind, "seed": cfg.seed, **summary}
    spath = out / "summary.json"
    spath.write_text(json.dumps(_jsonable(summary), indent=2, sort_keys=True))
    files = [*files, spath]
    manifest = {
        "config": cfg.echo(),
        "versions": {"fracinv": __version__, "python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__},
        "wall_time_s": time.perf_counter() - t0,
        "exit_status": status,
        "outputs": [{"path": p.name, "sha256": _sha256(p)} for p in files],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str))
    print(json.dumps(_jsonable(summary), indent=2, sort_keys=True))
    return status


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fracinv", description="Forward solves, inversions and invariant checks for nonlocal and fractional reaction-diffusion systems.")
    ap.add_argument("--config", help="TOML config file")
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--seed", type=int, help="unsigned 64-bit seed")
    ap.add_argument("--workers", type=int, help="worker threads for basis sweeps")
    ap.add_argument("--kind", choices=KINDS, help="experiment kind")
    return ap


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, args)
    except ConfigError as err:
        if "run.kind" in str(err):
            parser.print_usage(sys.stderr)
        print(f"fracinv: {err}", file=sys.stderr)
        return 2
    except OSError as err:
        print(f"fracinv: config field --config: {err}", file=sys.stderr)
        return 2
    try:
        return run(cfg)
    except ConfigError as err:
        print(f"fracinv: {err}", file=sys.stderr)
        return 2
    except SolverError as err:
        print(f"fracinv: solver failed at step {err.step} (residual {err.residual:.3e}): {err}", file=sys.stderr)
        return 3
    except UnresolvedCoefficientsError as err:
        print(f"fracinv: {err}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
