"""Command-line front end.

Subcommands: verify | fixed-point | propagator | vertex | integrals | rg-flow.

Configuration comes from an optional ``key = value`` file (``#`` comments,
keys may carry a ``section.`` prefix which is ignored) and is overridden by
flags.  Every output embeds the fully resolved configuration, and nothing
time- or host-dependent is written, so equal inputs give byte-identical files.

Exit codes: 0 success, 1 computation or verification failure, 2 bad config.
"""
from __future__ import annotations

import argparse
import io
import json
import math
import sys
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from . import fock_oracle as F
from . import integrals as I
from . import op_algebra as O
from . import propagator as P
from . import vertex_rg as V
from .errors import ParameterError, Phi4Error, PoleInDimension
from .kernels import ThermalParams

SCHEMA_VERSION = 1
COMMANDS = ("verify", "fixed-point", "propagator", "vertex", "integrals", "rg-flow")
DEFAULT_FORMAT = {"verify": "json", "fixed-point": "csv", "propagator": "csv", "vertex": "json",
                  "integrals": "json", "rg-flow": "csv"}
TRUNCATION_WARN = 2.0   # beta * omega_min below this makes Fock truncation visible


class ConfigError(ParameterError):
    code = "config"


def _num(x: str) -> float:
    v = float(x)
    if not math.isfinite(v):
        raise ValueError("not finite")
    return v


def _int(x: str) -> int:
    v = float(x)
    if v != int(v):
        raise ValueError("not an integer")
    return int(v)


def _fmt(x: str) -> str:
    if x not in ("csv", "json"):
        raise ValueError("expected csv or json")
    return x


def _str(x: str) -> str:
    return x


# key -> parser; None defaults mean "use the command default"
KEYS: Dict[str, Callable[[str], Any]] = {
    "d": _num, "mass": _num, "lambda": _num, "beta": _num, "gamma": _num,
    "tol": _num, "seed": _int, "format": _fmt, "out": _str,
    # fixed-point sweep
    "d_min": _num, "d_max": _num, "d_step": _num,
    # propagator
    "k": _num, "omega2_min": _num, "omega2_max": _num, "n_omega": _int,
    # rg-flow
    "lambda0": _num, "ell0": _num, "ell_min": _num, "ell_max": _num, "n_ell": _int,
    "rg_source": _str,
}

COMMAND_DEFAULTS: Dict[str, Dict[str, Any]] = {
    "verify": {"d": 1.0, "mass": 0.6, "beta": 8.0, "gamma": 0.05, "lambda": 0.0},
    "fixed-point": {"d_min": 0.25, "d_max": 2.95, "d_step": 0.05, "lambda": 0.1},
    "propagator": {"d": 1.5, "lambda": 0.0, "k": 0.0, "omega2_min": 0.0, "omega2_max": 0.8, "n_omega": 5},
    "vertex": {"d": 2.0, "lambda": 0.1, "gamma": 5e-7},
    "integrals": {"d": 2.0},
    "rg-flow": {"d": 2.0, "lambda0": 1.0, "ell0": 0.01, "ell_min": 1e-4, "ell_max": 1e4, "n_ell": 17,
                "rg_source": "fitted"},
}
BASE_DEFAULTS = {"d": 2.0, "mass": 1.0, "lambda": 0.0, "beta": 1.0, "gamma": 0.0, "seed": 0}


@dataclass
class RunConfig:
    command: str
    params: ThermalParams
    quadrature: I.QuadratureSpec
    options: Dict[str, Any]
    fmt: str
    out: Optional[str]
    seed: int
    warnings: List[str] = field(default_factory=list)

    def resolved(self) -> Dict[str, Any]:
        keys = dict(self.options)
        keys.update({"d": self.params.d, "mass": self.params.m, "lambda": self.params.lam,
                     "beta": self.params.beta, "gamma": self.params.gamma,
                     "tol": self.quadrature.rel_tol, "seed": self.seed, "format": self.fmt})
        return dict(sorted(keys.items()))


def parse_config_text(text: str, source: str = "<config>") -> Dict[str, Any]:
    out: Dict[str, Any] = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected 'key = value'", field=f"line {n}")
        key, val = (s.strip() for s in line.split("=", 1))
        key = key.rsplit(".", 1)[-1]
        if key not in KEYS:
            raise ConfigError(f"{source}:{n}: unknown key", field=key)
        try:
            out[key] = KEYS[key](val)
        except ValueError as e:
            raise ConfigError(f"{source}:{n}: bad value {val!r} ({e})", field=key) from None
    return out


def build_config(command: str, file_values: Dict[str, Any], flags: Dict[str, Any]) -> RunConfig:
    vals = dict(BASE_DEFAULTS)
    vals.update(COMMAND_DEFAULTS.get(command, {}))
    vals.update(file_values)
    vals.update({k: v for k, v in flags.items() if v is not None})
    try:
        params = ThermalParams(d=vals["d"], m=vals["mass"], lam=vals["lambda"], beta=vals["beta"],
                               gamma=vals["gamma"])
    except ParameterError as e:
        raise ConfigError(str(e), field={"m": "mass", "lam": "lambda"}.get(e.field, e.field)) from None
    base_spec = I.DEFAULT_3D if command == "propagator" else I.DEFAULT_1D
    try:
        spec = base_spec.with_(rel_tol=vals["tol"]) if "tol" in vals else base_spec
    except ParameterError:
        raise ConfigError("tolerance must be positive", field="tol") from None
    fmt = vals.get("format") or DEFAULT_FORMAT[command]
    opts = {k: v for k, v in vals.items()
            if k not in ("d", "mass", "lambda", "beta", "gamma", "tol", "seed", "format", "out")}
    cfg = RunConfig(command, params, spec, opts, fmt, vals.get("out"), int(vals["seed"]))
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    o, p = cfg.options, cfg.params
    if cfg.command == "fixed-point":
        if not (0 < o["d_min"] <= o["d_max"] < 3):
            raise ConfigError("sweep must lie inside (0, 3)", field="d_min")
        if not o["d_step"] > 0:
            raise ConfigError("step must be positive", field="d_step")
    if cfg.command == "propagator":
        if o["n_omega"] < 1:
            raise ConfigError("need at least one frequency", field="n_omega")
        if o["k"] < 0:
            raise ConfigError("k must be non-negative", field="k")
    if cfg.command == "rg-flow":
        for key in ("ell0", "ell_min", "ell_max"):
            if not o[key] > 0:
                raise ConfigError("lengths must be positive", field=key)
        if o["n_ell"] < 2:
            raise ConfigError("need at least two lengths", field="n_ell")
        if o["rg_source"] not in ("fitted", "closed"):
            raise ConfigError("expected fitted or closed", field="rg_source")
    if cfg.command in ("vertex", "integrals", "rg-flow", "propagator") and not 0 < p.d < 3:
        raise ConfigError("need 0 < d < 3", field="d")


# ---------------------------------------------------------------------------
# output

def _clean(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, complex):
        return {"re": x.real, "im": x.imag}
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, float) and not math.isfinite(x):
        return repr(x)
    return x


def render_json(cfg: RunConfig, result: Dict[str, Any]) -> str:
    doc = {"schema_version": SCHEMA_VERSION, "command": cfg.command, "version": __version__,
           "config": cfg.resolved(), "warnings": cfg.warnings, "result": _clean(result)}
    return json.dumps(doc, indent=2, sort_keys=False) + "\n"


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def render_csv(cfg: RunConfig, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    buf = io.StringIO()
    buf.write(f"# schema_version={SCHEMA_VERSION}\n# command={cfg.command}\n# version={__version__}\n")
    for k, v in cfg.resolved().items():
        buf.write(f"# config.{k}={_cell(v)}\n")
    for w in cfg.warnings:
        buf.write(f"# warning={w}\n")
    buf.write(",".join(header) + "\n")
    for r in rows:
        buf.write(",".join(_cell(v) for v in r) + "\n")
    return buf.getvalue()


@dataclass
class Outcome:
    ok: bool
    json_result: Dict[str, Any]
    header: Sequence[str] = ()
    rows: Sequence[Sequence[Any]] = ()


def _table_result(header, rows, extra=None) -> Dict[str, Any]:
    res = {"columns": list(header), "rows": [list(r) for r in rows]}
    if extra:
        res.update(extra)
    return res


# ---------------------------------------------------------------------------
# commands

def _verify_grids(cfg: RunConfig) -> List[F.ModeGrid]:
    p = cfg.params
    return [F.ModeGrid([0.8], 8, p), F.ModeGrid([0.8, 0.8], 6, p)]


def cmd_verify(cfg: RunConfig) -> Outcome:
    grids = _verify_grids(cfg)
    for g in grids:
        bw = g.min_beta_omega()
        if bw < TRUNCATION_WARN:
            cfg.warnings.append(f"{g.n_modes}-mode grid: beta*omega_min={bw:.4g} < {TRUNCATION_WARN}, Fock "
                                "truncation errors exceed the default 1e-8 tolerance")
    reports = [F.verify_identities(g, seed=cfg.seed) for g in grids]
    ids = O.appendixC_identities()
    ok = all(r.passed for r in reports) and all(i.passed for i in ids)
    res = {"pass": ok,
           "dense": [json.loads(r.to_json()) for r in reports],
           "symbolic": [i.to_dict() for i in ids]}
    header = ("suite", "identity", "pass", "max_deviation", "tolerance")
    rows = []
    for r in reports:
        for c in r.checks:
            rows.append((r.grid, c.name, c.passed, c.max_deviation, c.tolerance))
    for i in ids:
        rows.append(("symbolic", i.name, i.passed, "", ""))
    return Outcome(ok, res, header, rows)


def cmd_fixed_point(cfg: RunConfig) -> Outcome:
    o = cfg.options
    n = int(math.floor((o["d_max"] - o["d_min"]) / o["d_step"] + 1e-9)) + 1
    # rounding keeps grid points such as d = 1 and d = 2 exact
    ds = [round(o["d_min"] + i * o["d_step"], 10) for i in range(n)]
    rows = V.fixed_point_sweep(ds, cfg.params.with_(lam=cfg.params.lam or 0.1))
    header = ("d", "lambda_star_closed", "lambda_star_fitted", "alpha_fitted")
    return Outcome(True, _table_result(header, rows), header, rows)


def cmd_propagator(cfg: RunConfig) -> Outcome:
    o, p = cfg.options, cfg.params
    res = P.propagator(p, k=o["k"], spec=cfg.quadrature)
    w2s = np.linspace(o["omega2_min"], o["omega2_max"], o["n_omega"])
    rows = []
    for w2 in w2s:
        C = complex(res.C_k(float(w2)))
        M = complex(res.M_k(float(w2)))
        rows.append((float(w2), o["k"] ** 2, C.real, C.imag, M.real, M.imag))
    header = ("omega2", "k2", "re_C", "im_C", "re_M", "im_M")
    summary = {kk: float(v) for kk, v in res.summary().items()}
    return Outcome(True, _table_result(header, rows, {"summary": summary}), header, rows)


def cmd_vertex(cfg: RunConfig) -> Outcome:
    r = V.four_point_gamma(cfg.params)
    rows = [(k, v) for k, v in r.contributions.items()] + [("total", r.ImGamma_over_F)]
    return Outcome(True, r.to_dict(), ("contribution", "value"), rows)


def cmd_integrals(cfg: RunConfig) -> Outcome:
    d = cfg.params.d
    spec = cfg.quadrature
    rows: List[Tuple[str, Any, Any]] = []

    def add(name, closed, quad):
        try:
            c = closed()
        except PoleInDimension:
            c = "pole"
        except ParameterError:
            c = "undefined"
        try:
            q = quad() if quad else ""
        except PoleInDimension:
            q = "pole"
        rows.append((name, c, q))

    add("I1", lambda: I.I1_closed(d), None)
    add("I1_prime", lambda: I.I1p_closed(d), lambda: I.I1p_quad(d, spec).checked())
    add("I1_double_prime", lambda: I.I1pp_closed(d), lambda: I.I1pp_quad(d, spec).checked())
    add("friction_integral", lambda: I.friction_integral(d), lambda: I.friction_integral_quad(d, spec).checked())
    add("I2", lambda: I.I2_I3(d)[0], None)
    add("I3", lambda: I.I3_closed_simplex(d), None)
    add("J", lambda: I.J_integral(cfg.params, spec).checked(), None)
    header = ("name", "closed_form", "quadrature")
    values = {name: {"closed_form": c, "quadrature": q} for name, c, q in rows}
    return Outcome(True, {"d": d, "integrals": values}, header, rows)


def cmd_rg_flow(cfg: RunConfig) -> Outcome:
    o, p = cfg.options, cfg.params
    if o["rg_source"] == "closed":
        rg = V.analytic_rg(p.d)
    else:
        rg = V.extract_fixed_point(p.with_(lam=p.lam or 0.1))
    ells = np.geomspace(o["ell_min"], o["ell_max"], o["n_ell"])
    rows = V.flow_trajectory(ells, o["lambda0"], o["ell0"], rg)
    header = ("ell", "lambda", "lambda_tilde", "beta", "invariant")
    return Outcome(True, _table_result(header, rows, {"rg": rg.to_dict()}), header, rows)


HANDLERS = {"verify": cmd_verify, "fixed-point": cmd_fixed_point, "propagator": cmd_propagator,
            "vertex": cmd_vertex, "integrals": cmd_integrals, "rg-flow": cmd_rg_flow}


# ---------------------------------------------------------------------------
# entry point

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="phi4diss", description="Dissipative phi^4 perturbation theory tools")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", metavar="PATH")
    ap.add_argument("--out", metavar="PATH")
    ap.add_argument("--format", choices=("csv", "json"))
    ap.add_argument("--seed", type=int)
    ap.add_argument("--d", type=float)
    ap.add_argument("--mass", type=float)
    ap.add_argument("--lambda", dest="lam", type=float)
    ap.add_argument("--beta", type=float)
    ap.add_argument("--gamma", type=float)
    ap.add_argument("--tol", type=float)
    return ap


def _emit(text: str, out: Optional[str], stream) -> None:
    if out:
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        stream.write(text)


def _error_doc(err: Phi4Error, command: str) -> str:
    doc = {"schema_version": SCHEMA_VERSION, "command": command, "error": err.to_dict()}
    return json.dumps(doc, indent=2) + "\n"


def main(argv: Optional[Sequence[str]] = None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    ap = build_parser()
    try:
        ns = ap.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else 2
    flags = {"d": ns.d, "mass": ns.mass, "lambda": ns.lam, "beta": ns.beta, "gamma": ns.gamma,
             "tol": ns.tol, "seed": ns.seed, "format": ns.format, "out": ns.out}
    try:
        file_values = {}
        if ns.config:
            try:
                with open(ns.config, encoding="utf-8") as fh:
                    text = fh.read()
            except OSError as e:
                raise ConfigError(f"cannot read config: {e.strerror}", field="config") from None
            file_values = parse_config_text(text, ns.config)
        cfg = build_config(ns.command, file_values, flags)
    except ParameterError as e:
        stderr.write(_error_doc(e, ns.command))
        return 2

    try:
        outcome = HANDLERS[ns.command](cfg)
    except ParameterError as e:
        stderr.write(_error_doc(e, ns.command))
        return 2
    except Phi4Error as e:
        stderr.write(_error_doc(e, ns.command))
        return 1
    for w in cfg.warnings:
        stderr.write(f"warning: {w}\n")
    if cfg.fmt == "json":
        text = render_json(cfg, outcome.json_result)
    else:
        text = render_csv(cfg, outcome.header, outcome.rows)
    _emit(text, cfg.out, stdout)
    return 0 if outcome.ok else 1


if __name__ == "__main__":   # pragma: no cover
    sys.exit(main())
