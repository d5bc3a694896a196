"""Command-line front end: ``equishoot <command> [flags]``.

Flags override values from ``--config``, a ``key = value`` file with
optional ``[section]`` headers.  Exit status: 0 success, 1 invalid input,
2 numerical failure, 3 I/O failure.  Failures also print an error JSON on
stderr (and into the output directory when it is writable).
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import equilibrium as eqm
from . import sde, survival
from .integrator import IntegrationError
from .ode import DEFAULT_EPS0, DEFAULT_EPS1, DomainError
from .params import RawParams, ValidationError, derive_params, params_from_delta, survival_regime
from .shooting import DEFAULT_ODE_TOL, DEFAULT_XI_TOL, ShootingError, certify, find_xi0

COMMANDS = ("validate", "solve", "equilibrium", "classify", "simulate", "prieto", "sweep")
SECTIONS = ("params", "tolerances", "sim", "output", "sweep", "main")

# key -> (type, default); None defaults mark values a command may require
KEYS = {
    "gamma": (float, None),
    "sigma_d": (float, None),
    "mu_d": (float, None),
    "beta1": (float, None),
    "beta2": (float, None),
    "d0": (float, 1.0),
    "theta2": (float, 1.0),
    "xi_tol": (float, DEFAULT_XI_TOL),
    "ode_tol": (float, DEFAULT_ODE_TOL),
    "eps0": (float, DEFAULT_EPS0),
    "eps1": (float, DEFAULT_EPS1),
    "anchor": (float, survival.DEFAULT_ANCHOR),
    "paths": (int, 1000),
    "dt": (float, 1e-3),
    "horizon": (float, 500.0),
    "seed": (int, 0),
    "y0": (float, 0.5),
    "scheme": (str, "EulerMaruyama"),
    "burn_in": (float, 0.2),
    "bins": (int, 50),
    "clamp_eps": (float, 1e-12),
    "out": (str, "."),
    "format": (str, "csv"),
    "table_points": (int, 201),
    "grid": (int, 20),
    "a_cap": (float, 3.5),
}

NEEDS = {
    "validate": ("gamma", "sigma_d", "mu_d", "beta1", "beta2"),
    "solve": ("gamma", "sigma_d", "mu_d", "beta1", "beta2"),
    "equilibrium": ("gamma", "sigma_d", "mu_d", "beta1", "beta2"),
    "classify": ("gamma", "sigma_d", "mu_d", "beta1", "beta2"),
    "simulate": ("gamma", "sigma_d", "mu_d", "beta1", "beta2"),
    "prieto": ("gamma", "sigma_d", "mu_d"),
    "sweep": ("sigma_d", "beta2"),
}


class ParseError(ValueError):
    code = "ParseError"


@dataclass
class RunConfig:
    command: str
    values: dict
    raw: RawParams | None = None
    sim: sde.SimConfig | None = None
    output_dir: Path = Path(".")
    format: str = "csv"
    sources: dict = field(default_factory=dict)

    @property
    def tolerances(self) -> dict:
        return {k: self.values[k] for k in ("xi_tol", "ode_tol", "eps0", "eps1")}

    def canonical(self) -> dict:
        vals = {k: v for k, v in self.values.items() if k != "out"}
        return {"command": self.command, "values": vals}

    def hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, default=repr).encode()
        return hashlib.sha256(blob).hexdigest()


def _flag(key: str) -> str:
    return "--" + key.replace("_", "-")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ParseError(message)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="equishoot", description="Equilibrium shooting, survival and simulation.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="key = value file; flags take precedence")
    for key, (typ, _) in KEYS.items():
        ap.add_argument(_flag(key), dest=key, type=typ, default=None)
    return ap


def read_config_file(path) -> tuple[dict, dict]:
    """Parse a config file into ``{key: raw string}`` plus the line of each key."""
    text = Path(path).read_text()
    lines = text.splitlines()
    first = next((ln.strip() for ln in lines if ln.strip() and not ln.strip().startswith(("#", ";"))), "")
    if not first.startswith("["):
        text = "[main]\n" + text
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ParseError(f"{path}: {exc}") from exc

    def line_of(key: str) -> int:
        for no, ln in enumerate(lines, start=1):
            if ln.split("=", 1)[0].strip() == key:
                return no
        return 0

    values, where = {}, {}
    for section in cp.sections():
        if section not in SECTIONS:
            raise ParseError(f"{path}: unknown section [{section}]")
        for key, val in cp.items(section):
            norm = key.strip().replace("-", "_")
            if norm not in KEYS:
                raise ParseError(f"{path}:{line_of(key)}: unknown key '{key}'")
            values[norm] = val.strip()
            where[norm] = f"{path}:{line_of(key)}"
    return values, where


def parse_config(argv=None) -> RunConfig:
    ap = build_parser()
    ns = ap.parse_args(argv)
    values = {k: d for k, (_, d) in KEYS.items()}
    sources = {}
    if ns.config:
        file_vals, where = read_config_file(ns.config)
        for key, text in file_vals.items():
            typ = KEYS[key][0]
            try:
                values[key] = typ(text)
            except ValueError:
                raise ParseError(f"{where[key]}: cannot read '{text}' as {typ.__name__} for '{key}'") from None
            sources[key] = where[key]
    for key in KEYS:
        v = getattr(ns, key)
        if v is not None:
            values[key] = v
            sources[key] = _flag(key)
    missing = [k for k in NEEDS[ns.command] if values[k] is None]
    if missing:
        raise ParseError(f"{ns.command} requires " + ", ".join(_flag(k) for k in missing))
    if values["format"] not in ("csv", "json"):
        raise ParseError(f"--format must be csv or json; got {values['format']!r}")
    if values["scheme"] not in [s.value for s in sde.Scheme]:
        raise ParseError(f"--scheme must be one of {[s.value for s in sde.Scheme]}; got {values['scheme']!r}")

    cfg = RunConfig(ns.command, values, output_dir=Path(values["out"]), format=values["format"], sources=sources)
    if all(values[k] is not None for k in ("gamma", "sigma_d", "mu_d", "beta1", "beta2")):
        cfg.raw = RawParams(values["gamma"], values["sigma_d"], values["mu_d"], values["beta1"], values["beta2"],
                            values["d0"], values["theta2"])
    if ns.command == "simulate":
        cfg.sim = sde.SimConfig(
            y0=values["y0"], dt=values["dt"], horizon=values["horizon"], n_paths=values["paths"],
            seed=values["seed"], clamp_eps=values["clamp_eps"], scheme=values["scheme"],
            burn_in=values["burn_in"], n_bins=values["bins"],
        )
    return cfg


# --- emission ---------------------------------------------------------------------------


def _json_default(o):
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.bool_,)):
        return bool(o)
    if isinstance(o, Path):
        return str(o)
    raise TypeError(repr(o))


def _clean(obj):
    # JSON has no infinity; encode non-finite floats as strings
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (float, np.floating)) and not math.isfinite(float(obj)):
        return repr(float(obj))
    return obj


def dump_json(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True, default=_json_default) + "\n"


def _write_json(path: Path, obj, cfg_hash: str) -> Path:
    payload = dict(obj)
    payload["config_sha256"] = cfg_hash
    path.write_text(dump_json(payload))
    return path


def _write_table(cfg: RunConfig, stem: str, header, rows, cfg_hash: str) -> Path:
    if cfg.format == "json":
        recs = [dict(zip(header, r)) for r in rows]
        return _write_json(cfg.output_dir / f"{stem}.json", {"columns": list(header), "rows": recs}, cfg_hash)
    path = cfg.output_dir / f"{stem}.csv"
    eqm.write_table(path, rows, header=header, comment=f"config_sha256={cfg_hash}")
    return path


# --- commands ---------------------------------------------------------------------------


def _params(cfg: RunConfig):
    return derive_params(cfg.raw)


def _solve(cfg: RunConfig, p):
    t = cfg.tolerances
    return find_xi0(p, xi_tol=t["xi_tol"], ode_tol=t["ode_tol"], eps0=t["eps0"], eps1=t["eps1"])


def _cmd_validate(cfg, h):
    p = _params(cfg)
    d = p.to_dict()
    d.update(a_threshold=p.a_threshold, regime=survival_regime(p).value, config_sha256=h)
    sys.stdout.write(dump_json(d))
    return []


def _cmd_solve(cfg, h):
    p = _params(cfg)
    cs = _solve(cfg, p)
    rep = certify(cs, p)
    curve = cs.curve
    rows = np.column_stack([curve.grid, curve.h_vals, curve.i_vals])
    out = [_write_table(cfg, "critical_curve", ["y", "h", "i_log"], rows, h)]
    out.append(_write_json(cfg.output_dir / "certificate.json", rep.to_dict(), h))
    sys.stdout.write(dump_json({"xi0": cs.xi0, "slope_end": cs.slope_end, "passed": rep.passed}))
    return out


def _cmd_equilibrium(cfg, h):
    p = _params(cfg)
    cs = _solve(cfg, p)
    eq = eqm.build_equilibrium(cs, p)
    table = eqm.tabulate(eq, n=cfg.values["table_points"])
    out = [_write_table(cfg, "equilibrium", eqm.TABLE_HEADER, table, h)]
    summary = {"xi0": cs.xi0, "g0": eq.g0, "theta2": p.theta2, "d0": p.d0}
    summary["y0"] = eqm.solve_initial_share(p.theta2, eq)
    out.append(_write_json(cfg.output_dir / "equilibrium_summary.json", summary, h))
    return out


def _build_eq(cfg, p):
    cs = _solve(cfg, p)
    return cs, eqm.build_equilibrium(cs, p)


def _cmd_classify(cfg, h):
    p = _params(cfg)
    _, eq = _build_eq(cfg, p)
    rep = survival.classify(p, eq, anchor=cfg.values["anchor"])
    out = [_write_json(cfg.output_dir / "survival.json", rep.to_dict(), h)]
    sys.stdout.write(dump_json({"classification": rep.classification.value, "provenance": rep.provenance.value}))
    return out


def _cmd_simulate(cfg, h):
    p = _params(cfg)
    cs, eq = _build_eq(cfg, p)
    cert = certify(cs, p)
    cert_hash = hashlib.sha256(cert.to_json().encode()).hexdigest()
    stats = sde.simulate(eq, cfg.sim)
    try:
        law = sde.stationary_law(eq, cfg.values["anchor"])
        masses = law.bin_masses(stats.bin_edges)
        tv = sde.ergodic_distance(stats.occupation_frequency, masses)
    except (sde.NotNormalizable, survival.InconclusiveTail):
        masses, tv = np.full(cfg.sim.n_bins, np.nan), math.nan
    e = stats.bin_edges
    occ_rows = np.column_stack([e[:-1], e[1:], stats.occupation_frequency, masses])
    out = [_write_table(cfg, "occupation", ["bin_left", "bin_right", "occupation", "stationary_mass"], occ_rows, h)]
    term_rows = [[i, float(v)] for i, v in enumerate(stats.terminal_values)]
    if cfg.format == "json":
        out.append(_write_table(cfg, "terminal", ["path", "terminal_y"], term_rows, h))
    else:
        path = cfg.output_dir / "terminal.csv"
        sde.write_terminal_csv(path, stats, comment=f"config_sha256={h}")
        out.append(path)
    meta = json.loads(sde.run_metadata(cfg.sim, stats, cert_hash, {"tv_distance": tv}))
    out.append(_write_json(cfg.output_dir / "metadata.json", meta, h))
    return out


def _cmd_log_utility(cfg, h):
    v = cfg.values
    rep = survival.classify_log_utility(v["gamma"], v["mu_d"], v["sigma_d"])
    out = [_write_json(cfg.output_dir / "prieto.json", rep.to_dict(), h)]
    sys.stdout.write(dump_json({"eta": rep.eta, "classification": rep.classification.value}))
    return out


def sweep_grid(n: int):
    gammas = np.linspace(0.15, 0.85, n)
    fracs = np.linspace(0.05, 0.95, n)
    return [(float(g), float(-g * u)) for g in gammas for u in fracs]


def _sweep_point(args):
    gamma, delta, a_cap, sigma_d, beta2, tol, anchor = args
    p = params_from_delta(gamma, delta, a_cap, sigma_d=sigma_d, beta2=beta2)
    try:
        cs = find_xi0(p, xi_tol=tol["xi_tol"], ode_tol=tol["ode_tol"], eps0=tol["eps0"], eps1=tol["eps1"])
        rep = survival.classify(p, eqm.build_equilibrium(cs, p), anchor=anchor)
        return survival.sweep_row(p, rep)
    except (ShootingError, IntegrationError, DomainError):
        nan = repr(math.nan)
        return [repr(p.delta), repr(p.gamma), nan, nan, "", "", nan,
                survival.Classification.INDETERMINATE.value, survival.Provenance.NUMERICALLY_INDICATED.value]


def _cmd_sweep(cfg, h):
    v = cfg.values
    jobs = [(g, d, v["a_cap"], v["sigma_d"], v["beta2"], cfg.tolerances, v["anchor"]) for g, d in sweep_grid(v["grid"])]
    workers = sde._worker_count(None)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_point, jobs))
    else:
        rows = [_sweep_point(j) for j in jobs]
    if cfg.format == "json":
        return [_write_table(cfg, "sweep", survival.SWEEP_HEADER, rows, h)]
    path = cfg.output_dir / "sweep.csv"
    survival.write_sweep(path, rows, comment=f"config_sha256={h}")
    return [path]


HANDLERS = {
    "validate": _cmd_validate,
    "solve": _cmd_solve,
    "equilibrium": _cmd_equilibrium,
    "classify": _cmd_classify,
    "simulate": _cmd_simulate,
    "prieto": _cmd_log_utility,
    "sweep": _cmd_sweep,
}

INPUT_ERRORS = (ValidationError, ParseError, eqm.ThetaOutOfRange, sde.ConfigError)
NUMERICAL_ERRORS = (ShootingError, IntegrationError, DomainError, survival.InconclusiveTail, sde.NotNormalizable,
                    ArithmeticError)


def _error_payload(exc: BaseException, status: int) -> dict:
    return {"error": getattr(exc, "code", type(exc).__name__), "message": str(exc), "exit_status": status}


def _status(exc: BaseException) -> int | None:
    if isinstance(exc, INPUT_ERRORS):
        return 1
    if isinstance(exc, NUMERICAL_ERRORS):
        return 2
    if isinstance(exc, OSError):
        return 3
    return None


def run(cfg: RunConfig) -> int:
    h = cfg.hash()
    try:
        if cfg.command != "validate":
            cfg.output_dir.mkdir(parents=True, exist_ok=True)
        HANDLERS[cfg.command](cfg, h)
        return 0
    except Exception as exc:  # noqa: BLE001 - mapped to exit codes below
        status = _status(exc)
        if status is None:
            raise
        payload = _error_payload(exc, status)
    payload["config_sha256"] = h
    sys.stderr.write(dump_json(payload))
    if status != 3:
        try:
            (cfg.output_dir / "error.json").write_text(dump_json(payload))
        except OSError:
            pass
    return status


def main(argv=None) -> int:
    try:
        cfg = parse_config(argv)
    except (ParseError, sde.ConfigError) as exc:
        sys.stderr.write(dump_json(_error_payload(exc, 1)))
        return 1
    except OSError as exc:
        sys.stderr.write(dump_json(_error_payload(exc, 3)))
        return 3
    return run(cfg)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
