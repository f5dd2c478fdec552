"""Run configuration: a single text file of key = value pairs.

Lines are `key = value`, blank lines and everything after a # are ignored.
Every key must match a RunConfig field; values are coerced to the field's
type, with on/off style booleans accepted. Errors always name the offending
field so batch logs stay actionable.
"""

import os
import dataclasses
from dataclasses import dataclass

__all__ = ["ConfigError", "RunConfig", "parse_config", "check_config"]

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """All knobs of a sampling/training/validation campaign."""

    microstructure: str = ""
    out_dir: str = "run"
    seed: int = 0

    # stretch sampling campaign
    J_min: float = 1.0
    J_max: float = 1.0
    t_max: float = 0.3
    N_det: int = 1
    N_dir: int = 8
    N_amp: int = 4
    spacing: str = "uniform"
    vol_cases: int = 0
    vol_J_min: float = 1.0
    vol_J_max: float = 1.02

    # full-order snapshot solves
    fom_increments: int = 1
    fom_rtol: float = 1e-9
    fom_max_iter: int = 30
    linear_solver: str = "direct"

    # basis extraction; pod_modes 0 defers to the energy tolerance
    pod_modes: int = 0
    pod_energy_tol: float = 1e-8

    # reduced solver
    rb_rtol: float = 1e-10
    rb_xtol: float = 1e-12
    rb_max_iter: int = 50
    rb_max_assemblies: int = 4
    rb_increments: int = 1

    # low-J quadrature cutoff
    cutoff_enabled: bool = True
    cutoff_lower: float = 0.4
    cutoff_upper: float = 0.6
    cutoff_center: float = 0.5
    cutoff_steepness: float = 30.0

    # held-out validation campaign
    val_directions: int = 8
    val_amplitudes: int = 4
    val_t_max: float = 0.3
    val_seed: int = 1
    val_compression: float = 0.0


def _coerce(name, kind, raw):
    try:
        if kind is bool:
            low = raw.strip().lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"field {name!r}: {exc}") from None


def parse_config(path):
    """Read a key = value file into a RunConfig, catching unknown keys."""
    fields = {f.name: f.type for f in dataclasses.fields(RunConfig)}
    kinds = {"str": str, "int": int, "float": float, "bool": bool,
             str: str, int: int, float: float, bool: bool}
    cfg = RunConfig()
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from None
    for ln, line in enumerate(lines, start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{path}:{ln}: expected key = value, got {body!r}")
        key, _, raw = body.partition("=")
        key, raw = key.strip(), raw.strip()
        if key not in fields:
            raise ConfigError(f"{path}:{ln}: unknown key {key!r}")
        setattr(cfg, key, _coerce(key, kinds[fields[key]], raw))
    return cfg


def check_config(cfg, need_microstructure=False):
    """Validate field ranges; raises ConfigError naming the bad field."""
    def positive(name):
        if not getattr(cfg, name) > 0:
            raise ConfigError(f"field {name!r} must be positive")

    def at_least_one(name):
        if getattr(cfg, name) < 1:
            raise ConfigError(f"field {name!r} must be at least 1")

    for name in ("t_max", "fom_rtol", "rb_rtol", "rb_xtol", "pod_energy_tol",
                 "val_t_max", "cutoff_steepness"):
        positive(name)
    for name in ("N_det", "N_dir", "N_amp", "fom_increments", "fom_max_iter",
                 "rb_max_iter", "rb_max_assemblies", "rb_increments",
                 "val_directions", "val_amplitudes"):
        at_least_one(name)
    if cfg.pod_modes < 0:
        raise ConfigError("field 'pod_modes' must be 0 (automatic) or positive")
    if cfg.vol_cases < 0:
        raise ConfigError("field 'vol_cases' must be nonnegative")
    if cfg.N_det > 1 and not cfg.J_min < 1.0 < cfg.J_max:
        raise ConfigError("fields 'J_min' < 1 < 'J_max' required when N_det > 1")
    if cfg.spacing not in ("uniform", "adaptive"):
        raise ConfigError("field 'spacing' must be 'uniform' or 'adaptive'")
    if cfg.linear_solver not in ("direct", "cg"):
        raise ConfigError("field 'linear_solver' must be 'direct' or 'cg'")
    if not cfg.cutoff_lower < cfg.cutoff_center < cfg.cutoff_upper:
        raise ConfigError("fields 'cutoff_lower' < 'cutoff_center' < "
                          "'cutoff_upper' required")
    if not 0.0 <= cfg.val_compression < 1.0:
        raise ConfigError("field 'val_compression' must lie in [0, 1)")
    if need_microstructure:
        if not cfg.microstructure:
            raise ConfigError("field 'microstructure' is required")
        if not os.path.exists(cfg.microstructure):
            raise ConfigError(
                f"field 'microstructure': no file {cfg.microstructure!r}")
    return cfg
