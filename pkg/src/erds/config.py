"""TOML scenario configuration: parsing, validation and emission."""

from __future__ import annotations

import ast
import dataclasses
import hashlib
import sys
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np
import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError


# ----------------------------------------------------------------------
# safe expressions for initial data and potentials
# ----------------------------------------------------------------------

_FUNCS = {"exp": np.exp, "log": np.log, "sqrt": np.sqrt, "sin": np.sin, "cos": np.cos,
          "tan": np.tan, "tanh": np.tanh, "sinh": np.sinh, "cosh": np.cosh, "abs": np.abs,
          "minimum": np.minimum, "maximum": np.maximum, "where": np.where}
_CONSTS = {"pi": np.pi}
_VARS = ("x", "y")
_BINOPS = (ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow)
_CMPOPS = (ast.Lt, ast.LtE, ast.Gt, ast.GtE)


def check_expression(text: str) -> Optional[str]:
    """Return an error message if ``text`` is not an allowed expression."""
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        return f"syntax error in expression {text!r}: {exc.msg}"
    for node in ast.walk(tree):
        if isinstance(node, (ast.Expression, ast.Load, ast.UnaryOp, ast.USub, ast.UAdd)):
            continue
        if isinstance(node, ast.BinOp) and isinstance(node.op, _BINOPS):
            continue
        if isinstance(node, ast.Compare) and all(isinstance(o, _CMPOPS) for o in node.ops):
            continue
        if isinstance(node, _BINOPS + _CMPOPS):
            continue
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            continue
        if isinstance(node, ast.Name) and (node.id in _FUNCS or node.id in _CONSTS or node.id in _VARS):
            continue
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _FUNCS \
                and not node.keywords:
            continue
        return f"disallowed element {type(node).__name__} in expression {text!r}"
    return None


def evaluate_expression(text: str, coords: np.ndarray) -> np.ndarray:
    """Evaluate a checked expression on cell centres ``coords`` (shape ``(d, ...)``)."""
    err = check_expression(text)
    if err:
        raise ConfigError(err)
    env = dict(_FUNCS)
    env.update(_CONSTS)
    env["x"] = coords[0]
    env["y"] = coords[1] if coords.shape[0] > 1 else np.zeros_like(coords[0])
    with np.errstate(all="ignore"):
        val = eval(compile(ast.parse(text, mode="eval"), "<expr>", "eval"), {"__builtins__": {}}, env)
    return np.broadcast_to(np.asarray(val, dtype=float), coords.shape[1:]).copy()


def expression_function(text: str):
    """Callable ``f(x)`` for a checked expression, ``x`` of shape ``(d, ...)``."""
    err = check_expression(text)
    if err:
        raise ConfigError(err)
    return lambda x: evaluate_expression(text, np.asarray(x, dtype=float))


# ----------------------------------------------------------------------
# sections
# ----------------------------------------------------------------------

@dataclass
class ScenarioSection:
    kind: str = "torus"
    seed: int = 0


@dataclass
class GridSection:
    kind: str = ""
    dim: int = 1
    n: int = 256
    half_width: float = 6.0


@dataclass
class EntropySection:
    kind: str = "example2"
    c: float = 1.0
    sigma: float = 0.5
    b: list = field(default_factory=lambda: [0.5, 0.5])
    coef: list = field(default_factory=lambda: [1.0, 1.0])
    potentials: list = field(default_factory=list)
    gamma: str = ""


@dataclass
class ReactionSection:
    form: str = "read_shockley_hall"
    k0: float = 1.0
    c_n: float = 0.1
    c_p: float = 0.1
    energy_exponent: float = 1.0
    reactions: list = field(default_factory=list)


@dataclass
class PotentialSection:
    V: str = "x**2/2 + log(pi)/4"


@dataclass
class InitialSection:
    n: str = "2 + 0.5*cos(2*pi*x)"
    p: str = "0.5 + 0.3*cos(2*pi*x)"
    e: str = "1 + 0.5*cos(2*pi*x)"
    u: list = field(default_factory=list)
    relative_to_equilibrium: bool = False
    noise: float = 0.0


@dataclass
class RunSection:
    dt: float = 1e-3
    t_end: float = 10.0
    cadence: float = 0.01
    kappa: float = 0.1
    snapshots: list = field(default_factory=list)


@dataclass
class DiagnosticsSection:
    eep: bool = True
    constants: str = "trial"
    C_P: float = 0.0
    C_LS: float = 0.0
    C_S: float = 0.0
    trials: int = 8


@dataclass
class OutputSection:
    directory: str = "runs"
    formats: list = field(default_factory=lambda: ["csv", "json"])


@dataclass
class Config:
    scenario: ScenarioSection = field(default_factory=ScenarioSection)
    grid: GridSection = field(default_factory=GridSection)
    entropy: EntropySection = field(default_factory=EntropySection)
    reaction: ReactionSection = field(default_factory=ReactionSection)
    potential: PotentialSection = field(default_factory=PotentialSection)
    initial: InitialSection = field(default_factory=InitialSection)
    run: RunSection = field(default_factory=RunSection)
    diagnostics: DiagnosticsSection = field(default_factory=DiagnosticsSection)
    output: OutputSection = field(default_factory=OutputSection)
    sweep: dict = field(default_factory=dict)

    def hash(self) -> str:
        return hashlib.sha256(emit_config(self).encode()).hexdigest()[:12]


_SECTION_TYPES = {"scenario": ScenarioSection, "grid": GridSection, "entropy": EntropySection,
                  "reaction": ReactionSection, "potential": PotentialSection,
                  "initial": InitialSection, "run": RunSection,
                  "diagnostics": DiagnosticsSection, "output": OutputSection}


def _coerce(value, default, where, errors):
    """Coerce ``value`` to the type of ``default``; record a message on failure."""
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
    elif isinstance(default, int):
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        if where.endswith("grid.n") and isinstance(value, list) and all(isinstance(v, int) for v in value):
            return value
    elif isinstance(default, float):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
    elif isinstance(default, str):
        if isinstance(value, str):
            return value
    elif isinstance(default, list):
        if isinstance(value, list):
            return value
    errors.append(f"{where}: expected {type(default).__name__}, got {type(value).__name__}")
    return default


def _build(data: dict, errors: list) -> Config:
    cfg = Config()
    for sec, body in data.items():
        if sec == "sweep":
            if not isinstance(body, dict):
                errors.append("sweep: expected a table")
                continue
            for k, v in body.items():
                if not isinstance(v, list) or not v:
                    errors.append(f"sweep.{k}: overrides must be non-empty lists")
                elif "." not in k or k.split(".", 1)[0] not in _SECTION_TYPES:
                    errors.append(f"sweep.{k}: key must be 'section.field'")
            cfg.sweep = dict(body)
            continue
        if sec not in _SECTION_TYPES:
            errors.append(f"{sec}: unknown section")
            continue
        if not isinstance(body, dict):
            errors.append(f"{sec}: expected a table")
            continue
        obj = getattr(cfg, sec)
        known = {f.name for f in fields(obj)}
        for key, value in body.items():
            if key not in known:
                errors.append(f"{sec}.{key}: unknown key")
                continue
            setattr(obj, key, _coerce(value, getattr(obj, key), f"{sec}.{key}", errors))
    return cfg


def validate(cfg: Config) -> list:
    """Semantic checks; returns a list of error messages."""
    errs = []
    kind = cfg.scenario.kind
    if kind not in ("torus", "confined", "general"):
        errs.append(f"scenario.kind: must be torus, confined or general, got {kind!r}")
    g = cfg.grid
    if g.dim not in (1, 2):
        errs.append("grid.dim: only 1 or 2 supported")
    ns = g.n if isinstance(g.n, list) else [g.n]
    if isinstance(g.n, list) and len(g.n) != g.dim:
        errs.append("grid.n: list length must equal grid.dim")
    if any(v < 3 for v in ns):
        errs.append("grid.n: need at least 3 cells per axis")
    if g.kind not in ("", "torus", "box"):
        errs.append("grid.kind: must be torus or box (empty selects by scenario)")
    elif (kind == "torus" and g.kind == "box") or (kind == "confined" and g.kind == "torus"):
        errs.append(f"grid.kind: {g.kind} grid is incompatible with a {kind} scenario")
    if g.half_width <= 0:
        errs.append("grid.half_width: must be positive")
    ent = cfg.entropy
    if ent.c < 0:
        errs.append("entropy.c: must be non-negative")
    if ent.c == 0 and cfg.diagnostics.eep and kind != "general":
        errs.append("entropy.c = 0 with diagnostics.eep = true: the entropy-entropy-production "
                    "estimate requires a positive heat weight c > 0 (the C_S term divides by c)")
    if kind in ("torus", "confined"):
        if ent.kind != "example2" or ent.sigma != 0.5 or list(ent.b) != [0.5, 0.5] or list(ent.coef) != [1.0, 1.0]:
            errs.append("entropy: torus and confined scenarios use the square-root model "
                        "(kind example2, sigma 0.5, b [0.5, 0.5], coef [1, 1])")
        if ent.potentials or ent.gamma:
            errs.append("entropy.potentials/gamma: only used by general scenarios")
    if ent.kind not in ("example1", "example2"):
        errs.append("entropy.kind: must be example1 or example2")
    if len(ent.b) != len(ent.coef):
        errs.append("entropy.b and entropy.coef must have equal length")
    if ent.potentials and len(ent.potentials) != len(ent.b):
        errs.append("entropy.potentials: one expression per species expected")
    for i, expr in enumerate(ent.potentials):
        if not isinstance(expr, str) or check_expression(expr):
            errs.append(f"entropy.potentials[{i}]: {check_expression(expr) if isinstance(expr, str) else 'expected string'}")
    if ent.gamma and check_expression(ent.gamma):
        errs.append(f"entropy.gamma: {check_expression(ent.gamma)}")
    r = cfg.reaction
    if r.form not in ("constant", "read_shockley_hall"):
        errs.append("reaction.form: must be constant or read_shockley_hall")
    if r.k0 < 0:
        errs.append("reaction.k0: must be non-negative")
    elif r.k0 == 0 and cfg.diagnostics.eep and cfg.scenario.kind != "general":
        errs.append("reaction.k0 = 0 with diagnostics.eep = true: the estimate needs a positive rate bound")
    if r.k0 == 0 and cfg.scenario.kind == "general":
        errs.append("reaction.k0: general scenarios need k0 > 0 (mass-action rates must be positive)")
    if r.c_n < 0 or r.c_p < 0:
        errs.append("reaction.c_n, reaction.c_p: must be non-negative")
    for i, rx in enumerate(r.reactions):
        if not isinstance(rx, dict) or set(rx) != {"alpha", "beta"}:
            errs.append(f"reaction.reactions[{i}]: expected {{alpha = [...], beta = [...]}}")
        elif len(rx["alpha"]) != len(ent.b) or len(rx["beta"]) != len(ent.b):
            errs.append(f"reaction.reactions[{i}]: vectors must have one entry per species")
    if kind == "confined":
        if check_expression(cfg.potential.V):
            errs.append(f"potential.V: {check_expression(cfg.potential.V)}")
    ini = cfg.initial
    exprs = [("initial.e", ini.e)]
    if kind == "general" and ini.u:
        if len(ini.u) != len(ent.b):
            errs.append("initial.u: one expression per species expected")
        exprs += [(f"initial.u[{i}]", v) for i, v in enumerate(ini.u)]
    else:
        exprs += [("initial.n", ini.n), ("initial.p", ini.p)]
    for where, expr in exprs:
        msg = check_expression(expr) if isinstance(expr, str) else "expected string"
        if msg:
            errs.append(f"{where}: {msg}")
    if ini.noise < 0 or ini.noise >= 1:
        errs.append("initial.noise: must lie in [0, 1)")
    run = cfg.run
    if run.dt <= 0 or run.t_end <= 0 or run.cadence <= 0 or run.kappa <= 0:
        errs.append("run: dt, t_end, cadence and kappa must be positive")
    if run.cadence < run.dt:
        errs.append("run.cadence: must be at least dt")
    d = cfg.diagnostics
    if d.constants not in ("trial", "gaussian", "given"):
        errs.append("diagnostics.constants: must be trial, gaussian or given")
    if d.constants == "given" and min(d.C_P, d.C_LS, d.C_S) <= 0:
        errs.append("diagnostics: constants = 'given' needs positive C_P, C_LS and C_S")
    for f_ in cfg.output.formats:
        if f_ not in ("csv", "json"):
            errs.append(f"output.formats: unknown format {f_!r}")
    return errs


def parse_config(text: str) -> Config:
    """Parse and validate TOML text.

    Raises:
        ConfigError: With every problem found (syntax errors carry line and
            column).
    """
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([f"syntax error: {exc}"]) from exc
    errors = []
    cfg = _build(data, errors)
    errors += validate(cfg)
    if errors:
        raise ConfigError(errors)
    return cfg


def config_to_dict(cfg: Config) -> dict:
    out = {}
    for name in _SECTION_TYPES:
        out[name] = dataclasses.asdict(getattr(cfg, name))
    if cfg.sweep:
        out["sweep"] = dict(cfg.sweep)
    return out


def emit_config(cfg: Config) -> str:
    """TOML text that parses back to ``cfg``."""
    return tomli_w.dumps(config_to_dict(cfg))


def apply_override(cfg: Config, key: str, value) -> Config:
    """Copy of ``cfg`` with ``section.field`` set to ``value`` (revalidated)."""
    data = config_to_dict(cfg)
    data.pop("sweep", None)
    sec, name = key.split(".", 1)
    data.setdefault(sec, {})[name] = value
    return parse_config(tomli_w.dumps(data))
