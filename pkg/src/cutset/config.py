"""Flat ``key = value`` run configuration files.

One setting per line; ``#`` starts a comment.  Keys are the fields of
:class:`~cutset.samplers.RunConfig`; keys starting with ``model.`` are passed
to the model builder.  Vector values are comma separated.  Step sizes accept
``auto`` to request pilot tuning.
"""
from __future__ import annotations

from dataclasses import fields

from .errors import ConfigError
from .samplers import RunConfig

__all__ = ["parse_config", "render_config", "DEFAULTS"]

_INT = {"n_iterations", "thin", "n0", "m", "aux_prerun", "n_int", "seed", "workers", "neighbours",
        "chains", "grid_candidates"}
_FLOAT = {"burn_in_fraction", "p_mix"}
_INT_VEC = {"kappa"}
_FLOAT_VEC_OPT = {"phi_step_sd", "theta_step_sd"}
_BOOL = {"dump_aux"}
_STR = {"algorithm", "model"}
KNOWN = _INT | _FLOAT | _INT_VEC | _FLOAT_VEC_OPT | _BOOL | _STR

DEFAULTS = RunConfig()


def _parse_value(key: str, raw: str, line: int):
    try:
        if key in _INT:
            return int(raw)
        if key in _FLOAT:
            return float(raw)
        if key in _INT_VEC:
            return tuple(int(v) for v in raw.split(","))
        if key in _FLOAT_VEC_OPT:
            if raw.lower() in ("auto", "none"):
                return None
            return tuple(float(v) for v in raw.split(","))
        if key in _BOOL:
            low = raw.lower()
            if low in ("true", "yes", "1"):
                return True
            if low in ("false", "no", "0"):
                return False
            raise ValueError(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for {key}", line) from None


def _model_value(raw: str):
    for kind in (int, float):
        try:
            return kind(raw)
        except ValueError:
            pass
    if "," in raw:
        try:
            return tuple(float(v) for v in raw.split(","))
        except ValueError:
            pass
    return raw


def parse_config(text: str) -> RunConfig:
    """Parse configuration text into a validated :class:`RunConfig`.

    Raises
    ------
    ConfigError
        On unknown keys, malformed lines, bad values or violated constraints.
        The message carries the offending line number where there is one.
    """
    values: dict = {}
    model_params: dict = {}
    where: dict = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", lineno)
        key, raw = (s.strip() for s in line.split("=", 1))
        if not raw:
            raise ConfigError(f"missing value for {key}", lineno)
        if key in where or key in model_params:
            raise ConfigError(f"duplicate key {key}", lineno)
        if key.startswith("model.") and len(key) > 6:
            model_params[key[6:]] = _model_value(raw)
            where[key] = lineno
            continue
        if key not in KNOWN:
            raise ConfigError(f"unknown key {key!r}", lineno)
        values[key] = _parse_value(key, raw, lineno)
        where[key] = lineno
    try:
        return RunConfig(**values, model_params=model_params)
    except ValueError as exc:
        line = None
        for key, ln in where.items():
            if key in str(exc):
                line = ln
                break
        raise ConfigError(str(exc), line) from None


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    return str(v)


def render_config(config: RunConfig) -> str:
    """Inverse of :func:`parse_config`."""
    lines = []
    for f in fields(config):
        if f.name == "model_params":
            continue
        v = getattr(config, f.name)
        lines.append(f"{f.name} = {'auto' if v is None else _fmt(v)}")
    for k in sorted(config.model_params):
        lines.append(f"model.{k} = {_fmt(config.model_params[k])}")
    return "\n".join(lines) + "\n"
