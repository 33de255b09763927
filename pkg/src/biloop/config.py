"""Flat ``key = value`` experiment configuration.

One dotted key per line, ``#`` starts a comment, blank lines are ignored::

    problem.name = quadratic
    problem.kappa = 100     # inner condition number
    problem.seed = 1
    algorithm = aid
    scheme = N_LOOP
    beta = corollary-default
    K = 2000
    epsilon = 1e-6

Numeric loop sizes and stepsizes either hold a number or the literal
``corollary-default``; leaving a key out means the same thing when a
scheme is given.
"""

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Union

from .analysis import SchemeId
from .exceptions import ConfigError, ParameterError

DEFAULT = "corollary-default"

# problem name -> {parameter: (type, default)}
PROBLEM_PARAMS = {
    "quadratic": {"p": (int, 5), "q": (int, 5), "kappa": (float, 10.0), "coupling": (str, "spread")},
    "lower_bound": {"L": (float, 2.0), "mu": (float, 1.0), "M": (float, 1.0)},
    "hyper_representation": {"dims": (tuple, (30, 5, 20, 100)), "gamma": (float, 0.01),
                             "noise": (float, 0.1)},
    "hyper_cleaning": {"n": (int, 200), "m": (int, 10), "noise_frac": (float, 0.1)},
}

LOOP_KEYS = ("N", "Q")
STEP_KEYS = ("alpha", "eta", "beta")

Setting = Union[int, float, str, None]


@dataclass(frozen=True)
class ExperimentConfig:
    problem: str
    problem_params: dict = field(default_factory=dict)
    seed: int = 0
    algorithm: str = "aid"
    scheme: Optional[str] = None
    N: Setting = None
    Q: Setting = None
    alpha: Setting = None
    eta: Setting = None
    beta: Setting = None
    K: int = 100
    epsilon: float = 1e-6
    c_beta: float = 0.5
    trace_stride: int = 1
    warm_start_y: bool = True
    warm_start_v: bool = True
    output: Optional[str] = None
    wall_time: bool = False

    def __post_init__(self):
        _validate(self)

    def with_value(self, key, value):
        """Copy with one loop/stepsize/scheme setting replaced (used by sweeps)."""
        if key not in LOOP_KEYS + STEP_KEYS + ("scheme",):
            raise ConfigError(f"cannot override {key!r}", key)
        if key != "scheme":
            value = _parse_setting(key, str(value))
        return replace(self, **{key: value})

    def scheme_id(self):
        return None if self.scheme is None else SchemeId.parse(self.scheme, self.algorithm)

    def to_text(self):
        """Canonical text form; ``parse_config(cfg.to_text()) == cfg``."""
        lines = [f"problem.name = {self.problem}"]
        lines.append(f"problem.seed = {self.seed}")
        for k in sorted(self.problem_params):
            lines.append(f"problem.{k} = {_fmt(self.problem_params[k])}")
        lines.append(f"algorithm = {self.algorithm}")
        if self.scheme is not None:
            lines.append(f"scheme = {self.scheme}")
        for k in LOOP_KEYS + STEP_KEYS:
            v = getattr(self, k)
            if v is not None:
                lines.append(f"{k} = {_fmt(v)}")
        lines += [
            f"K = {self.K}",
            f"epsilon = {_fmt(self.epsilon)}",
            f"c_beta = {_fmt(self.c_beta)}",
            f"trace_stride = {self.trace_stride}",
            f"warm_start.y = {_fmt(self.warm_start_y)}",
        ]
        if self.algorithm == "aid":
            lines.append(f"warm_start.v = {_fmt(self.warm_start_v)}")
        if self.output is not None:
            lines.append(f"output = {self.output}")
        lines.append(f"output.wall_time = {_fmt(self.wall_time)}")
        return "\n".join(lines) + "\n"


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return str(v)


def _to_bool(text, key):
    t = text.lower()
    if t in ("true", "yes", "1"):
        return True
    if t in ("false", "no", "0"):
        return False
    raise ConfigError(f"expected true/false, got {text!r}", key)


def _to_int(text, key):
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"expected an integer, got {text!r}", key) from None


def _to_float(text, key):
    try:
        v = float(text)
    except ValueError:
        raise ConfigError(f"expected a number, got {text!r}", key) from None
    if not math.isfinite(v):
        raise ConfigError(f"expected a finite number, got {text!r}", key)
    return v


def _parse_setting(key, text):
    if text == DEFAULT:
        return DEFAULT
    return _to_int(text, key) if key in LOOP_KEYS else _to_float(text, key)


def _convert(kind, text, key):
    if kind is int:
        return _to_int(text, key)
    if kind is float:
        return _to_float(text, key)
    if kind is tuple:
        return tuple(_to_int(t.strip(), key) for t in text.split(","))
    return text


def _validate(cfg):
    if cfg.problem not in PROBLEM_PARAMS:
        raise ConfigError(f"unknown problem {cfg.problem!r}; choose from {sorted(PROBLEM_PARAMS)}", "problem.name")
    allowed = PROBLEM_PARAMS[cfg.problem]
    for k in cfg.problem_params:
        if k not in allowed:
            raise ConfigError(f"not a parameter of {cfg.problem}", f"problem.{k}")
    if cfg.algorithm not in ("aid", "itd"):
        raise ConfigError(f"expected aid or itd, got {cfg.algorithm!r}", "algorithm")
    if cfg.scheme is not None:
        try:
            SchemeId.parse(cfg.scheme, cfg.algorithm)
        except ParameterError as exc:
            raise ConfigError(str(exc), "scheme") from None
    needed = ("N", "Q", "alpha", "eta", "beta") if cfg.algorithm == "aid" else ("N", "alpha", "beta")
    if cfg.algorithm == "itd":
        for k in ("Q", "eta"):
            if getattr(cfg, k) is not None:
                raise ConfigError("not used by itd", k)
        if not cfg.warm_start_v:
            raise ConfigError("not used by itd", "warm_start.v")
    for k in needed:
        v = getattr(cfg, k)
        if cfg.scheme is None and (v is None or v == DEFAULT):
            raise ConfigError("needs an explicit value when no scheme is set", k)
        if k in LOOP_KEYS and isinstance(v, int) and v < 1:
            raise ConfigError(f"must be a positive integer, got {v}", k)
        if k in STEP_KEYS and isinstance(v, float) and v < 0:
            raise ConfigError(f"must be non-negative, got {v}", k)
    if not (isinstance(cfg.K, int) and cfg.K >= 1):
        raise ConfigError(f"must be a positive integer, got {cfg.K}", "K")
    if not cfg.epsilon > 0:
        raise ConfigError(f"must be > 0, got {cfg.epsilon}", "epsilon")
    if not cfg.c_beta > 0:
        raise ConfigError(f"must be > 0, got {cfg.c_beta}", "c_beta")
    if not (isinstance(cfg.trace_stride, int) and cfg.trace_stride >= 1):
        raise ConfigError(f"must be a positive integer, got {cfg.trace_stride}", "trace_stride")


_TOP = {
    "algorithm": ("algorithm", str),
    "scheme": ("scheme", str),
    "K": ("K", int),
    "epsilon": ("epsilon", float),
    "c_beta": ("c_beta", float),
    "trace_stride": ("trace_stride", int),
    "warm_start.y": ("warm_start_y", bool),
    "warm_start.v": ("warm_start_v", bool),
    "output": ("output", str),
    "output.wall_time": ("wall_time", bool),
}


def parse_config(text):
    """Parse the flat text form into an :class:`ExperimentConfig`."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        if not value:
            raise ConfigError(f"line {lineno}: empty value", key)
        if key in raw:
            raise ConfigError(f"line {lineno}: set more than once", key)
        raw[key] = value

    if "problem.name" not in raw:
        raise ConfigError("missing", "problem.name")
    name = raw.pop("problem.name")
    if name not in PROBLEM_PARAMS:
        raise ConfigError(f"unknown problem {name!r}; choose from {sorted(PROBLEM_PARAMS)}", "problem.name")
    kw = {"problem": name}
    if "problem.seed" in raw:
        kw["seed"] = _to_int(raw.pop("problem.seed"), "problem.seed")
    params = {}
    for key in [k for k in raw if k.startswith("problem.")]:
        pname = key[len("problem."):]
        if pname not in PROBLEM_PARAMS[name]:
            raise ConfigError(f"not a parameter of {name}", key)
        params[pname] = _convert(PROBLEM_PARAMS[name][pname][0], raw.pop(key), key)
    kw["problem_params"] = params

    for key, value in raw.items():
        if key in LOOP_KEYS + STEP_KEYS:
            kw[key] = _parse_setting(key, value)
        elif key in _TOP:
            attr, kind = _TOP[key]
            kw[attr] = _to_bool(value, key) if kind is bool else _convert(kind, value, key)
        else:
            raise ConfigError("unknown key", key)
    if "scheme" in kw:
        kw["scheme"] = kw["scheme"].upper().replace("-", "_")
    return ExperimentConfig(**kw)


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())

