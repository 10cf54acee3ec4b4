"""Experiment configuration: a flat, sectioned ``key = value`` format.

Example::

    [system]
    N = 1000
    C = 1.0          # or U = 0.001
    mu = 0.2
    omega = 1.37

    [run]
    seed = 7

    [lyapunov-map]
    n_z = 40
    n_phi = 40

Values are numbers, ``true``/``false``, quoted or bare strings, or
bracketed comma-separated lists. ``#`` and ``;`` start comments. Every
problem found is reported with its line number, not only the first.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import hashlib
import json
import math
import re

from .model import SystemParams, build_params

KINDS = (
    "poincare", "lyapunov-map", "chaos-fraction-scan", "evolve", "qfunc",
    "condensate-map", "tw-evolve", "number-dist", "bhattacharyya", "effective-compare",
)
STATE_NAMES = ("regular-1", "regular-2", "chaotic", "coherent")
U64_MAX = 2 ** 64 - 1


class ConfigError(ValueError):
    """Carries every problem found in a configuration."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("\n".join(self.errors))


@dataclass(frozen=True)
class Field:
    kind: str                       # int | float | bool | str | floats | strs
    default: object = None
    required: bool = False
    choices: tuple = ()
    check: object = None            # callable(value) -> error message or None


def _positive(v):
    return None if v > 0 else "must be positive"


def _non_negative(v):
    return None if v >= 0 else "must be non-negative"


def _z_fraction(v):
    vals = v if isinstance(v, list) else [v]
    return None if all(abs(x) <= 0.5 for x in vals) else "z fractions must satisfy |z/N| <= 1/2"


def _open_z_fraction(v):
    return None if abs(v) < 0.5 else "must lie strictly inside (-0.5, 0.5)"


def _perfect_square(v):
    return None if v >= 1 and math.isqrt(v) ** 2 == v else "must be a positive perfect square"


_TIME = {
    "t_end": Field("float", 20.0, check=_non_negative),
    "time_unit": Field("str", "period", choices=("period", "absolute")),
}
_SAMPLES = {"n_samples": Field("int", 41, check=lambda v: None if v >= 2 else "must be at least 2")}
_STATE = {
    "state": Field("str", "chaotic", choices=STATE_NAMES),
    "z0": Field("float", None, check=_z_fraction),
    "phi0": Field("float", None),
}
_GRID = {
    "n_z": Field("int", 40, check=_positive),
    "n_phi": Field("int", 40, check=_positive),
    "z_min": Field("float", -0.45, check=_open_z_fraction),
    "z_max": Field("float", 0.45, check=_open_z_fraction),
    "phi_center": Field("float", 0.0),
}
_SOURCE = {"source": Field("str", "time_dependent", choices=("time_dependent", "effective"))}
_QUANTUM = {"max_step": Field("float", 0.025, check=_positive)}
_LYAP = {
    "n_periods": Field("int", 20, check=_positive),
    "delta0": Field("float", 1e-4, check=_positive),
}
_TW = {
    "n_traj": Field("int", 10000, check=_positive),
    "sampling": Field("str", "fixed_n", choices=("fixed_n", "glauber")),
}

SCHEMA = {
    "system": {
        "N": Field("int", required=True, check=lambda v: None if v >= 1 else "violates the invariant N >= 1"),
        "U": Field("float"),
        "C": Field("float"),
        "J0": Field("float", 1.0, check=lambda v: None if v > 0 else "violates the invariant J0 > 0"),
        "mu": Field("float", 0.0),
        "omega": Field("float", 1.0),
    },
    "run": {
        "seed": Field("int", 0, check=lambda v: None if 0 <= v <= U64_MAX else "must fit in an unsigned 64-bit integer"),
        "threads": Field("int", 1, check=_positive),
    },
    "poincare": {
        "seeds_z": Field("floats", required=True, check=_z_fraction),
        "seeds_phi": Field("floats", required=True),
        "periods": Field("int", 200, check=_positive),
        "strobe_period": Field("float", None, check=_positive),
        "effective": Field("bool", False),
    },
    "lyapunov-map": {**_GRID, **_LYAP, "with_threshold": Field("bool", True)},
    "chaos-fraction-scan": {
        "mu_values": Field("floats", required=True),
        "omega_values": Field("floats", required=True),
        "n_samples": Field("int", 1600, check=_perfect_square),
    },
    "evolve": {**_STATE, **_TIME, **_SAMPLES, **_SOURCE, **_QUANTUM},
    "qfunc": {**_STATE, **_TIME, **_SOURCE, **_QUANTUM,
              "n_z": Field("int", 200, check=_positive), "n_phi": Field("int", 200, check=_positive)},
    "condensate-map": {**_GRID, **_TIME, **_SOURCE, **_QUANTUM},
    "tw-evolve": {**_STATE, **_TIME, **_SAMPLES, **_TW, "compare_exact": Field("bool", True)},
    "number-dist": {**_STATE, **_TIME, **_TW, **_QUANTUM,
                    "method": Field("str", "both", choices=("exact", "binned-TW", "both"))},
    "bhattacharyya": {
        "states": Field("strs", ["regular-1", "regular-2", "chaotic"]),
        "p_values": Field("floats", [1e-3]),
        "method": Field("str", "exact", choices=("exact", "binned-TW")),
        **_TIME, "n_samples": Field("int", 21, check=lambda v: None if v >= 2 else "must be at least 2"),
        **_TW, **_QUANTUM,
    },
    "effective-compare": {**_STATE, **_TIME, **_SAMPLES, **_QUANTUM,
                          "periods": Field("int", 100, check=_positive),
                          "seeds_z": Field("floats", [-0.4, -0.2, 0.0, 0.2, 0.4], check=_z_fraction),
                          "seeds_phi": Field("floats", [0.0, 0.0, 0.0, 0.0, 0.0])},
}


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    params: SystemParams
    seed: int
    threads: int
    options: dict
    system: dict = field(default_factory=dict)

    def canonical(self) -> str:
        """Normalized config text; parsing it reproduces this config."""
        lines = ["[system]"]
        lines += [f"{k} = {_render(v)}" for k, v in self.system.items()]
        lines += ["", "[run]", f"seed = {self.seed}", "", f"[{self.kind}]"]
        lines += [f"{k} = {_render(v)}" for k, v in self.options.items() if v is not None]
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        """Hash of everything that determines the data (threads excluded)."""
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    def replace(self, **kw) -> "ExperimentConfig":
        d = dict(kind=self.kind, params=self.params, seed=self.seed, threads=self.threads,
                 options=self.options, system=self.system)
        d.update(kw)
        return ExperimentConfig(**d)


def _render(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, list):
        return "[" + ", ".join(_render(x) for x in v) + "]"
    if isinstance(v, str):
        return json.dumps(v)
    return str(v)


_SECTION = re.compile(r"^\[\s*([A-Za-z0-9_.-]+)\s*\]$")
_PAIR = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)\s*=\s*(.*)$")


def _strip_comment(line: str) -> str:
    out, quote = [], None
    for ch in line:
        if quote:
            quote = None if ch == quote else quote
        elif ch in "\"'":
            quote = ch
        elif ch in "#;":
            break
        out.append(ch)
    return "".join(out).strip()


def _scalar(tok: str):
    tok = tok.strip()
    if len(tok) >= 2 and tok[0] == tok[-1] and tok[0] in "\"'":
        return tok[1:-1]
    low = tok.lower()
    if low in ("true", "false"):
        return low == "true"
    if re.fullmatch(r"[+-]?\d+", tok):
        return int(tok)
    try:
        return float(tok)
    except ValueError:
        return tok


def _literal(raw: str):
    raw = raw.strip()
    if raw.startswith("["):
        if not raw.endswith("]"):
            raise ValueError("unterminated list")
        body = raw[1:-1].strip()
        return [] if not body else [_scalar(t) for t in body.split(",")]
    if raw == "":
        raise ValueError("missing value")
    return _scalar(raw)


def _coerce(value, f: Field):
    kind = f.kind
    if kind in ("floats", "strs"):
        items = value if isinstance(value, list) else [value]
        return [_coerce(x, Field(kind[:-1] if kind == "strs" else "float")) for x in items]
    if isinstance(value, list):
        raise ValueError("expected a single value, got a list")
    if kind == "bool":
        if not isinstance(value, bool):
            raise ValueError("expected true or false")
        return value
    if kind == "int":
        if isinstance(value, bool):
            raise ValueError("expected an integer")
        if isinstance(value, float) and value.is_integer():
            return int(value)
        if not isinstance(value, int):
            raise ValueError("expected an integer")
        return value
    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValueError("expected a number")
        value = float(value)
        if not math.isfinite(value):
            raise ValueError("must be finite")
        return value
    if kind == "str":
        if not isinstance(value, str):
            raise ValueError("expected a string")
        if f.choices and value not in f.choices:
            raise ValueError(f"must be one of {', '.join(f.choices)}")
        return value
    raise AssertionError(kind)


def _tokenize(text: str, errors: list):
    """``{section: {key: (value, line)}}`` plus section header lines."""
    sections, headers = {}, {}
    current = None
    for lineno, line in enumerate(text.splitlines(), 1):
        body = _strip_comment(line)
        if not body:
            continue
        m = _SECTION.match(body)
        if m:
            current = m.group(1)
            if current in headers:
                errors.append(f"line {lineno}: section [{current}] repeats line {headers[current]}")
            else:
                headers[current] = lineno
                sections[current] = {}
            continue
        m = _PAIR.match(body)
        if not m:
            errors.append(f"line {lineno}: expected 'key = value' or '[section]'")
            continue
        if current is None:
            errors.append(f"line {lineno}: key {m.group(1)!r} appears before any section")
            continue
        key = m.group(1)
        if key in sections[current]:
            first = sections[current][key][1]
            errors.append(f"line {lineno}: duplicate key {key!r} in [{current}] (first at line {first}, again at line {lineno})")
            continue
        try:
            sections[current][key] = (_literal(m.group(2)), lineno)
        except ValueError as exc:
            errors.append(f"line {lineno}: {key}: {exc}")
            sections[current][key] = (None, lineno)
    return sections, headers


def parse_config(text: str, kind: str | None = None) -> ExperimentConfig:
    """Parse and validate; raises :class:`ConfigError` listing every problem."""
    errors: list[str] = []
    sections, headers = _tokenize(text, errors)
    present = [s for s in sections if s in KINDS]
    if kind is None:
        if len(present) != 1:
            errors.append("line 0: exactly one experiment section is required "
                          f"(one of {', '.join(KINDS)})")
            raise ConfigError(errors)
        kind = present[0]
    elif kind not in KINDS:
        raise ConfigError(errors + [f"line 0: unknown experiment kind {kind!r}"])

    for name, lineno in headers.items():
        if name not in ("system", "run", kind):
            what = "section for a different experiment" if name in KINDS else "unknown section"
            errors.append(f"line {lineno}: {what} [{name}]")
    if "system" not in sections:
        errors.append("line 0: missing required section [system]")

    resolved = {}
    for sec in ("system", "run", kind):
        schema = SCHEMA[sec]
        given = sections.get(sec, {})
        out = {}
        for key, (value, lineno) in given.items():
            if key not in schema:
                errors.append(f"line {lineno}: unknown key {key!r} in [{sec}]")
                continue
            if value is None:
                continue
            f = schema[key]
            try:
                v = _coerce(value, f)
            except ValueError as exc:
                errors.append(f"line {lineno}: {key}: {exc}")
                continue
            msg = f.check(v) if f.check else None
            if msg:
                errors.append(f"line {lineno}: {key} = {_render(v)} {msg}")
                continue
            out[key] = v
        where = headers.get(sec, 0)
        for key, f in schema.items():
            if key in out:
                continue
            if f.required and (sec in sections or sec == "system"):
                if key not in given:
                    errors.append(f"line {where}: missing required key {key!r} in [{sec}]")
            elif not f.required:
                out[key] = list(f.default) if isinstance(f.default, list) else f.default
        resolved[sec] = {k: out[k] for k in schema if k in out}

    def line_of(sec, key):
        return sections.get(sec, {}).get(key, (None, headers.get(sec, 0)))[1]

    system = resolved["system"]
    params = None
    if "N" in system:
        has_u, has_c = system.get("U") is not None, system.get("C") is not None
        if has_u == has_c:
            errors.append(f"line {headers.get('system', 0)}: give exactly one of U or C in [system]")
        else:
            U = system["U"] if has_u else system["C"] * system["J0"] / system["N"]
            try:
                params = build_params(U, system["J0"], system["mu"], system["omega"], system["N"])
            except ValueError as exc:
                bad = "omega" if "omega" in str(exc) else "mu"
                errors.append(f"line {line_of('system', bad)}: invariant violated: {exc}")

    opts = resolved[kind]
    _cross_check(kind, opts, params, errors, lambda k: line_of(kind, k))
    if errors:
        raise ConfigError(errors)
    sys_echo = {k: v for k, v in system.items() if v is not None}
    return ExperimentConfig(kind, params, resolved["run"]["seed"], resolved["run"]["threads"],
                            opts, sys_echo)


def _cross_check(kind, opts, params, errors, line):
    if "seeds_z" in opts and "seeds_phi" in opts and opts["seeds_z"] is not None \
            and opts["seeds_phi"] is not None and len(opts["seeds_z"]) != len(opts["seeds_phi"]):
        errors.append(f"line {line('seeds_phi')}: seeds_z and seeds_phi differ in length "
                      f"({len(opts['seeds_z'])} vs {len(opts['seeds_phi'])})")
    if "z_min" in opts and opts["z_min"] > opts["z_max"]:
        errors.append(f"line {line('z_max')}: z_max must not be below z_min")
    if "state" in opts:
        coherent = opts["state"] == "coherent"
        for key in ("z0", "phi0"):
            if coherent and opts[key] is None:
                errors.append(f"line {line('state')}: state = coherent needs {key}")
            if not coherent and opts[key] is not None:
                errors.append(f"line {line(key)}: {key} is only used with state = coherent")
    if "states" in opts:
        for s in opts["states"]:
            if s not in STATE_NAMES[:3]:
                errors.append(f"line {line('states')}: unknown state {s!r} "
                              f"(one of {', '.join(STATE_NAMES[:3])})")
    if "p_values" in opts and any(p <= -1 for p in opts["p_values"]):
        errors.append(f"line {line('p_values')}: perturbations must satisfy p > -1")
    if kind == "chaos-fraction-scan" and opts.get("omega_values") is not None \
            and any(w <= 0 for w in opts["omega_values"]):
        errors.append(f"line {line('omega_values')}: drive frequencies must be positive")
    if params is None:
        return
    if opts.get("time_unit") == "period" and params.mu == 0 and kind not in ("chaos-fraction-scan",):
        errors.append(f"line {line('time_unit')}: time_unit = period needs a driven system "
                      "(mu != 0); use time_unit = absolute")
    if kind == "poincare" and params.mu == 0 and opts["strobe_period"] is None:
        errors.append(f"line {line('strobe_period')}: an undriven section needs strobe_period")
    if opts.get("state") in STATE_NAMES[:3] and params.mu == 0:
        errors.append(f"line {line('state')}: representative states need a driven system")
    if kind == "bhattacharyya" and params.mu == 0:
        errors.append(f"line {line('states')}: representative states need a driven system")
    if kind in ("effective-compare",) and params.omega <= 0:
        errors.append(f"line {line('t_end')}: the effective Hamiltonian needs omega > 0")
    if kind == "evolve" and opts.get("source") == "effective" and params.omega <= 0:
        errors.append(f"line {line('source')}: the effective Hamiltonian needs omega > 0")
