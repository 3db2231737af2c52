"""Run configuration: flat ``key = value`` files plus command-line overrides."""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Optional

from . import __version__
from .deposition import RNG_ALGORITHM, Case, ConfigError, MechanismConfig
from .impact import DEFAULT_OMEGAS

MECHANISM_KEYS = {f.name for f in fields(MechanismConfig)}


def _int_list(v: str) -> tuple[int, ...]:
    return tuple(int(x) for x in str(v).replace(" ", "").split(",") if x)


@dataclass(frozen=True)
class RunConfig:
    mechanism: MechanismConfig = field(default_factory=MechanismConfig)
    output_dir: str = "out"
    replicas: int = 1
    jobs: int = 1
    decimation: int = 1
    # impact probes
    omega_grid: tuple[int, ...] = DEFAULT_OMEGAS
    g_bins: int = 16
    probe_period: int = 10
    min_samples: int = 50
    n_batches: int = 50
    max_censored: float = 1e-3
    collapse_omega_max: float = 30.0
    # granularity sampling
    sample_period: int = 10
    # return tails
    lag: int = 1
    tail_fraction: float = 0.01
    bins_per_decade: int = 10
    # sweep grid
    sweep_case: tuple[int, ...] = ()
    sweep_tau: tuple[int, ...] = ()
    sweep_k: tuple[int, ...] = ()
    sweep_L: tuple[int, ...] = ()

    def validate(self) -> "RunConfig":
        self.mechanism.validate()
        if self.replicas < 1:
            raise ConfigError("replicas", f"must be >= 1, got {self.replicas}")
        if self.jobs < 1:
            raise ConfigError("jobs", f"must be >= 1, got {self.jobs}")
        if self.decimation < 1:
            raise ConfigError("decimation", f"must be >= 1, got {self.decimation}")
        if not self.omega_grid or min(self.omega_grid) < 1:
            raise ConfigError("omega_grid", "needs at least one volume, all >= 1")
        for name in ("g_bins", "probe_period", "min_samples", "sample_period", "lag", "bins_per_decade"):
            if getattr(self, name) < 1:
                raise ConfigError(name, f"must be >= 1, got {getattr(self, name)}")
        if self.n_batches < 2:
            raise ConfigError("n_batches", "must be >= 2")
        if not 0 < self.tail_fraction < 1:
            raise ConfigError("tail_fraction", "must lie in (0, 1)")
        return self

    def meta_lines(self, command: str) -> list[str]:
        """Everything needed to rerun the command, one ``key=value`` per line.

        The output directory and worker count are left out: neither affects
        results, so identical runs produce identical files.
        """
        lines = [f"zilob {__version__}", f"command={command}", f"rng={RNG_ALGORITHM}"]
        for k, v in sorted(self.mechanism.as_dict().items()):
            lines.append(f"{k}={v}")
        for f in fields(self):
            if f.name in ("mechanism", "output_dir", "jobs"):
                continue
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            lines.append(f"{f.name}={v}")
        return lines


_CONVERTERS: dict[str, Any] = {
    "case": lambda v: Case(int(v)),
    "pi": float, "L": int, "k": int, "tau": int, "seed": int, "steps": int, "warmup": int,
    "output_dir": str, "replicas": int, "jobs": int, "decimation": int,
    "omega_grid": _int_list, "g_bins": int, "probe_period": int, "min_samples": int,
    "n_batches": int, "max_censored": float, "collapse_omega_max": float,
    "sample_period": int, "lag": int, "tail_fraction": float, "bins_per_decade": int,
    "sweep_case": _int_list, "sweep_tau": _int_list, "sweep_k": _int_list, "sweep_L": _int_list,
}
_ALIASES = {"out": "output_dir"}


def parse_config_text(text: str) -> dict[str, Any]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out: dict[str, Any] = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}", f"expected 'key = value', got {raw.strip()!r}")
        key, value = (x.strip() for x in line.split("=", 1))
        key = _ALIASES.get(key, key)
        if key not in _CONVERTERS:
            raise ConfigError(key, "unknown configuration key")
        out[key] = _convert(key, value)
    return out


def _convert(key: str, value: Any) -> Any:
    try:
        return _CONVERTERS[key](value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(key, f"cannot parse {value!r}") from exc


def build_config(values: dict[str, Any], base: Optional[RunConfig] = None) -> RunConfig:
    """Apply ``values`` over ``base`` (or defaults) and validate."""
    base = base or RunConfig()
    mech = {k: v for k, v in values.items() if k in MECHANISM_KEYS}
    rest = {k: v for k, v in values.items() if k not in MECHANISM_KEYS}
    try:
        cfg = replace(base, mechanism=replace(base.mechanism, **mech), **rest)
    except ValueError as exc:
        raise ConfigError("case", str(exc)) from exc
    return cfg.validate()


def load_config(path: Optional[str], overrides: dict[str, Any]) -> RunConfig:
    values: dict[str, Any] = {}
    if path is not None:
        try:
            values.update(parse_config_text(Path(path).read_text()))
        except OSError as exc:
            raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from exc
    values.update({k: _convert(k, v) if isinstance(v, str) else v
                   for k, v in overrides.items() if v is not None})
    return build_config(values)
