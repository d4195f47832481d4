"""Run configuration: a sectioned ``key = value`` text format.

Example::

    [run]
    subcommand = "bands"
    csv = "bands.csv"

    [lattice]
    basis = [[2*pi]]

    [potential]
    coefficients = {(1,): 1.0, (-1,): 1.0}

    [numeric]
    cutoff = 8.0
    grid = [32]

Values are Python-style literals (numbers, strings, booleans, lists,
tuples, dicts) with arithmetic and the name ``pi`` allowed.  Lines starting
with ``#`` or ``;`` are comments.  Overrides of the form
``section.key=value`` are applied on top of the file.
"""

from __future__ import annotations

import ast
import hashlib
import math
import operator
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .magnetic import Flux, farey_fluxes

SUBCOMMANDS = ("bands", "berry", "butterfly", "dynamics", "pump")

_REQUIRED = {
    "bands": ("run", "lattice", "potential", "numeric"),
    "berry": ("run", "lattice", "potential", "numeric"),
    "butterfly": ("run", "potential", "numeric"),
    "dynamics": ("run", "lattice", "potential", "numeric", "dynamics"),
    "pump": ("run", "lattice", "numeric", "pump"),
}


# --- value evaluation -------------------------------------------------------------

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow}
_UNOPS = {ast.USub: operator.neg, ast.UAdd: operator.pos}
_NAMES = {"pi": math.pi, "True": True, "False": False, "true": True, "false": False}


def _eval_node(node):
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float, complex, str, bool)):
        return node.value
    if isinstance(node, ast.Name) and node.id in _NAMES:
        return _NAMES[node.id]
    if isinstance(node, ast.UnaryOp) and type(node.op) in _UNOPS:
        return _UNOPS[type(node.op)](_eval_node(node.operand))
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        return _BINOPS[type(node.op)](_eval_node(node.left), _eval_node(node.right))
    if isinstance(node, ast.List):
        return [_eval_node(e) for e in node.elts]
    if isinstance(node, ast.Tuple):
        return tuple(_eval_node(e) for e in node.elts)
    if isinstance(node, ast.Dict):
        return {_eval_node(k): _eval_node(v) for k, v in zip(node.keys, node.values)}
    raise ValueError(f"unsupported expression {ast.dump(node)[:40]}")


def evaluate(text: str):
    """Evaluate a literal value with arithmetic and ``pi``."""
    try:
        return _eval_node(ast.parse(text.strip(), mode="eval").body)
    except (SyntaxError, ValueError, TypeError, ZeroDivisionError) as exc:
        raise ValueError(str(exc)) from None


# --- raw parsing ---------------------------------------------------------------------

@dataclass
class _Entry:
    value: object
    line: int | str


def parse_sections(text: str) -> dict:
    """``{section: {key: _Entry}}`` with line numbers, before validation."""
    out, section = {}, None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        if line.startswith("["):
            if not line.endswith("]") or len(line) < 3:
                raise ConfigError(f"line {lineno}: malformed section header", line=lineno)
            section = line[1:-1].strip()
            if section in out:
                raise ConfigError(f"line {lineno}: duplicate section [{section}]", line=lineno, section=section)
            out[section] = {}
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'", line=lineno)
        if section is None:
            raise ConfigError(f"line {lineno}: key outside any section", line=lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if key in out[section]:
            raise ConfigError(f"line {lineno}: duplicate key {section}.{key}", line=lineno, key=f"{section}.{key}")
        try:
            out[section][key] = _Entry(evaluate(value), lineno)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: cannot read {section}.{key}: {exc}",
                              line=lineno, key=f"{section}.{key}") from None
    return out


def apply_overrides(sections: dict, overrides) -> dict:
    """Apply ``section.key=value`` strings; sections are created as needed."""
    for item in overrides or ():
        target, sep, value = item.partition("=")
        section, dot, key = target.strip().partition(".")
        if not sep or not dot or not key:
            raise ConfigError(f"override {item!r} is not of the form section.key=value", key=item)
        try:
            sections.setdefault(section, {})[key.strip()] = _Entry(evaluate(value), "--set")
        except ValueError as exc:
            raise ConfigError(f"override {item!r}: {exc}", key=target.strip()) from None
    return sections


# --- schema ---------------------------------------------------------------------------

def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _is_real(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _pos_int(v):
    return _is_int(v) and v > 0


def _nonneg_int(v):
    return _is_int(v) and v >= 0


def _pos_real(v):
    return _is_real(v) and v > 0


def _real(v):
    return _is_real(v) and math.isfinite(v)


def _int_list(v):
    return isinstance(v, (list, tuple)) and len(v) > 0 and all(_pos_int(x) for x in v)


def _real_list(v):
    return isinstance(v, (list, tuple)) and len(v) > 0 and all(_real(x) for x in v)


def _pos_list(v):
    return isinstance(v, (list, tuple)) and len(v) > 0 and all(_pos_real(x) for x in v)


def _window(v):
    return isinstance(v, (list, tuple)) and len(v) == 2 and _nonneg_int(v[0]) and _pos_int(v[1])


def _matrix(v):
    return isinstance(v, (list, tuple)) and len(v) > 0 and all(
        isinstance(r, (list, tuple)) and len(r) == len(v) and all(_real(x) for x in r) for r in v
    )


def _coeffs(v):
    return isinstance(v, dict) and all(
        isinstance(k, tuple) and all(_is_int(i) for i in k) and isinstance(c, (int, float, complex))
        and not isinstance(c, bool) for k, c in v.items()
    )


def _fluxes(v):
    return isinstance(v, (list, tuple)) and len(v) > 0 and all(
        isinstance(f, (list, tuple)) and len(f) == 2 and _nonneg_int(f[0]) and _pos_int(f[1]) for f in v
    )


def _bool(v):
    return isinstance(v, bool)


def _opt_str(v):
    return isinstance(v, str)


def _interp(v):
    return v in ("linear", "trigonometric")


# section -> key -> (check, description, default); default _REQ means required
_REQ = object()
SCHEMA = {
    "run": {
        "subcommand": (lambda v: v in SUBCOMMANDS, "one of " + ", ".join(SUBCOMMANDS), _REQ),
        "csv": (_opt_str, "a path string", ""),
        "json": (_opt_str, "a path string", ""),
        "threads": (_pos_int, "a positive integer", 1),
    },
    "lattice": {
        "basis": (_matrix, "a square matrix of reals (rows are basis vectors)", _REQ),
    },
    "potential": {
        "coefficients": (_coeffs, "a dict of integer tuples to numbers", _REQ),
        "spin_orbit": (_bool, "a boolean", False),
    },
    "numeric": {
        "cutoff": (_pos_real, "a positive real", 8.0),
        "grid": (_int_list, "a list of positive integers", [32]),
        "n_bands": (_pos_int, "a positive integer", 4),
        "window": (_window, "a pair [first_band, count]", [0, 1]),
        "epsilons": (_pos_list, "a list of positive reals", [1 / 16, 1 / 32, 1 / 64]),
        "horizon": (_pos_real, "a positive real", 1.0),
        "dt": (_pos_real, "a positive real", None),
        "q_max": (_pos_int, "a positive integer", None),
        "fluxes": (_fluxes, "a list of [p, q] pairs", None),
        "sizes": (_int_list, "a list of positive integers", [64, 64]),
        "chern": (_bool, "a boolean", False),
    },
    "dynamics": {
        "band": (_nonneg_int, "a non-negative integer", 0),
        "force": (_real_list, "a list of reals", [1.0]),
        "cells": (_pos_int, "a positive integer", 192),
        "n_y": (_pos_int, "a positive integer", 32),
        "width": (_pos_real, "a positive real", 0.5),
        "k0": (_real, "a real", 0.0),
        "dt_micro": (_pos_real, "a positive real", 0.02),
        "record_every": (_pos_int, "a positive integer", 50),
    },
    "pump": {
        "kind": (lambda v: v in ("sliding_cosine", "static"), "'sliding_cosine' or 'static'", "sliding_cosine"),
        "amplitude": (_pos_real, "a positive real", 1.0),
        "period": (_pos_real, "a positive real", 1.0),
        "n_snapshots": (_pos_int, "a positive integer", 256),
        "n_times": (_pos_int, "a positive integer", None),
        "n_occupied": (_pos_int, "a positive integer", 1),
        "direction": (_nonneg_int, "a non-negative integer", 0),
        "ramp": (_bool, "a boolean", True),
        "interpolation": (_interp, "'linear' or 'trigonometric'", "trigonometric"),
        "order": (_pos_int, "a positive even integer", 12),
    },
}


@dataclass(frozen=True, eq=False)
class RunSpec:
    """Validated configuration; blocks are plain dicts with defaults filled in."""

    subcommand: str
    run: dict
    lattice: dict | None
    potential: dict | None
    numeric: dict
    dynamics: dict | None = None
    pump: dict | None = None
    digest: str = ""
    lines: dict = field(default_factory=dict, repr=False)

    @property
    def basis(self) -> np.ndarray:
        return np.asarray(self.lattice["basis"], dtype=float)

    @property
    def dim(self) -> int:
        if self.lattice is not None:
            return len(self.lattice["basis"])
        return 2

    @property
    def flux_list(self) -> list:
        """Explicit fluxes, else every reduced ``p/q`` in ``[0, 1)`` with ``q <= q_max``."""
        n = self.numeric
        if n["fluxes"] is not None:
            return sorted({Flux(int(p), int(q)) for p, q in n["fluxes"]})
        return farey_fluxes(n["q_max"])


def _validate_block(name, entries):
    schema = SCHEMA[name]
    block, lines = {}, {}
    for key, entry in entries.items():
        if key not in schema:
            raise ConfigError(f"line {entry.line}: unknown key {name}.{key}", line=entry.line, key=f"{name}.{key}")
        check, desc, _ = schema[key]
        if not check(entry.value):
            raise ConfigError(f"line {entry.line}: {name}.{key} must be {desc}, got {entry.value!r}",
                              line=entry.line, key=f"{name}.{key}")
        block[key] = entry.value
        lines[key] = entry.line
    for key, (_, desc, default) in schema.items():
        if key not in block:
            if default is _REQ:
                raise ConfigError(f"section [{name}] is missing required key {key}", key=f"{name}.{key}")
            block[key] = default
    return block, lines


def _err(msg, lines, section, key):
    line = lines.get(section, {}).get(key, "?")
    return ConfigError(f"line {line}: {msg}", line=line, key=f"{section}.{key}")


def build_spec(sections: dict, text: str = "") -> RunSpec:
    for name, entries in sections.items():
        if name not in SCHEMA:
            line = min((e.line for e in entries.values() if isinstance(e.line, int)), default="?")
            raise ConfigError(f"unknown section [{name}] (near line {line})", line=line, section=name)
    if "run" not in sections:
        raise ConfigError("missing section [run]", section="run")
    blocks, lines = {}, {}
    for name, entries in sections.items():
        blocks[name], lines[name] = _validate_block(name, entries)
    sub = blocks["run"]["subcommand"]
    sub_line = lines["run"].get("subcommand", "?")
    for name in _REQUIRED[sub]:
        if name not in blocks:
            raise ConfigError(f"line {sub_line}: subcommand {sub!r} needs section [{name}]",
                              line=sub_line, section=name)
    for name in ("numeric", "dynamics", "pump"):
        if name not in blocks:
            blocks[name], lines[name] = _validate_block(name, {})
    _cross_checks(sub, blocks, lines)
    digest = hashlib.sha256(_canonical(blocks).encode()).hexdigest()
    return RunSpec(sub, blocks["run"], blocks.get("lattice"), blocks.get("potential"), blocks["numeric"],
                   blocks["dynamics"], blocks["pump"], digest, lines)


def _canonical(blocks) -> str:
    return repr(sorted((name, sorted((k, repr(v)) for k, v in b.items())) for name, b in blocks.items()))


def _cross_checks(sub, blocks, lines):
    num = blocks["numeric"]
    if "lattice" in blocks:
        d = len(blocks["lattice"]["basis"])
        if d not in (1, 2, 3):
            raise _err("lattice dimension must be 1, 2 or 3", lines, "lattice", "basis")
        if sub != "butterfly" and len(num["grid"]) != d:
            raise _err(f"numeric.grid needs {d} entries for a {d}-dimensional lattice", lines, "numeric", "grid")
        if "potential" in blocks:
            for key in blocks["potential"]["coefficients"]:
                if len(key) != d:
                    raise _err(f"potential index {key} does not match dimension {d}", lines,
                               "potential", "coefficients")
    w0, wm = num["window"]
    if sub in ("bands", "berry") and w0 + wm > num["n_bands"]:
        raise _err("numeric.window reaches beyond numeric.n_bands", lines, "numeric", "window")
    if sub == "berry" and wm != 1:
        raise _err("berry computes single-band geometry; window count must be 1", lines, "numeric", "window")
    if sub == "butterfly":
        sym = blocks["potential"]["coefficients"]
        if any(len(k) != 2 for k in sym):
            raise _err("butterfly symbols are indexed by pairs (n1, n2)", lines, "potential", "coefficients")
        if num["fluxes"] is None and num["q_max"] is None:
            raise ConfigError("butterfly needs numeric.q_max or numeric.fluxes", key="numeric.q_max")
        if len(num["sizes"]) != 2:
            raise _err("numeric.sizes needs two entries", lines, "numeric", "sizes")
        for p, q in num["fluxes"] or ():
            if p >= q and not (p == 0 and q == 1):
                raise _err(f"flux {p}/{q} is outside [0, 1)", lines, "numeric", "fluxes")
    if sub == "dynamics":
        d = len(blocks["lattice"]["basis"])
        if d != 1:
            raise _err("dynamics sweeps are one-dimensional", lines, "lattice", "basis")
        if len(blocks["dynamics"]["force"]) != d:
            raise _err("dynamics.force needs one component per dimension", lines, "dynamics", "force")
    if sub == "pump":
        p = blocks["pump"]
        if p["order"] % 2:
            raise _err("pump.order must be even", lines, "pump", "order")
        d = len(blocks["lattice"]["basis"])
        if p["direction"] >= d:
            raise _err("pump.direction exceeds the lattice dimension", lines, "pump", "direction")
        if p["kind"] == "static" and "potential" not in blocks:
            raise ConfigError("a static pump needs section [potential]", section="potential")


def parse_config(text: str, overrides=()) -> RunSpec:
    """Parse and validate configuration text; errors name the first offending key and line."""
    if not isinstance(text, str):
        raise ConfigError("configuration must be text")
    sections = apply_overrides(parse_sections(text), overrides)
    return build_spec(sections, text)
