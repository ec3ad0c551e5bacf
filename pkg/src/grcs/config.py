"""Flat key=value run configuration files.

The file mirrors SolverConfig one key per line plus optional file-path
entries; '#' starts a comment.  Unknown keys are rejected so typos never
silently fall back to defaults.  `eta = auto` (or omitting the key)
selects the derived step size.
"""

from dataclasses import dataclass, field

from .solver import SolverConfig
from .util import atomic_write_text

_INT_KEYS = frozenset({
    "block_dim", "patch_size", "group_size", "stride", "window",
    "components", "inner_grad_steps", "max_iter", "seed",
})
_FLOAT_KEYS = frozenset({"subrate", "sigma_n", "lam", "mu", "eta",
                         "stop_tol"})
_BOOL_KEYS = frozenset({"early_stop_on_reference"})
_PATH_KEYS = frozenset({"meas", "model", "out", "reference", "trace"})

SOLVER_KEYS = _INT_KEYS | _FLOAT_KEYS | _BOOL_KEYS


@dataclass
class RunConfig:
    """Parsed solver overrides plus optional file paths."""

    values: dict = field(default_factory=dict)
    paths: dict = field(default_factory=dict)

    def solver_config(self, subrate: float = None,
                      seed: int = None) -> SolverConfig:
        """Build the SolverConfig, filling unset keys from the published
        defaults for the subrate.  Arguments are fallbacks only: the
        file wins where it sets a value."""
        values = dict(self.values)
        file_subrate = values.pop("subrate", None)
        file_seed = values.pop("seed", None)
        use_subrate = file_subrate if file_subrate is not None else subrate
        if use_subrate is None:
            raise ValueError("subrate is set neither in the config file "
                             "nor by the caller")
        use_seed = file_seed if file_seed is not None else (seed or 0)
        return SolverConfig.for_subrate(use_subrate, seed=use_seed, **values)


def _parse_value(key: str, text: str):
    if key in _PATH_KEYS:
        return text
    if key in _BOOL_KEYS:
        low = text.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ValueError(f"bad boolean for {key}: {text!r}")
    if key in _INT_KEYS:
        return int(text)
    if key in _FLOAT_KEYS:
        if key == "eta" and text.lower() == "auto":
            return None
        return float(text)
    raise ValueError(f"unknown configuration key {key!r}")


def parse_run_config(text: str) -> RunConfig:
    cfg = RunConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value, "
                             f"got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key in cfg.values or key in cfg.paths:
            raise ValueError(f"line {lineno}: duplicate key {key!r}")
        try:
            parsed = _parse_value(key, value)
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from exc
        if key in _PATH_KEYS:
            cfg.paths[key] = parsed
        elif not (key == "eta" and parsed is None):
            cfg.values[key] = parsed
    return cfg


def load_run_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_run_config(fh.read())


def format_run_config(cfg: SolverConfig, paths: dict = None) -> str:
    lines = []
    for key in sorted(SOLVER_KEYS):
        value = getattr(cfg, key)
        if key == "eta" and value is None:
            value = "auto"
        elif key in _BOOL_KEYS:
            value = "true" if value else "false"
        lines.append(f"{key} = {value}")
    for key in sorted(paths or {}):
        if key not in _PATH_KEYS:
            raise ValueError(f"unknown path key {key!r}")
        lines.append(f"{key} = {paths[key]}")
    return "\n".join(lines) + "\n"


def save_run_config(cfg: SolverConfig, path, paths: dict = None) -> None:
    atomic_write_text(path, format_run_config(cfg, paths))
