"""Run configuration: one TOML file, flat overrides, a stable content hash.

Every run artifact carries the hash of the fully resolved configuration,
so outputs can be traced back to the exact settings that produced them
and equal hashes promise byte-identical report CSVs.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Mapping

try:
    import tomllib
except ModuleNotFoundError:  # 3.10 fallback
    import tomli as tomllib

from .validity import METRIC_IDS

__all__ = [
    "ConfigError",
    "RunConfig",
    "config_hash",
    "derive_seed",
    "load_config",
]

_PERIOD_RE = re.compile(r"^\d{4}-(0[1-9]|1[0-2])$")


class ConfigError(ValueError):
    """Invalid configuration or missing input; maps to exit code 2."""


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved settings for one run; validated on construction.

    ``input_tables`` is a path template with a ``{month}`` placeholder;
    when empty, monthly tables are synthesized from the ``synthetic_*``
    recipe instead. ``workers`` 0 means one worker per logical core.
    """

    months: tuple[str, ...] = ()
    seed: int = 7
    output_dir: str = "out"
    workers: int = 0

    input_tables: str = ""
    input_schema: str = ""
    input_features: tuple[str, ...] = ()

    synthetic_n: int = 1000
    synthetic_k: int = 3
    synthetic_numeric_dims: int = 4
    synthetic_categorical_dims: tuple[int, ...] = (6, 6, 6)
    synthetic_separation: float = 12.0
    synthetic_noise: float = 0.0
    synthetic_stable_clusters: int = 1
    synthetic_subject_pool: int = 0

    sampling_sizes: tuple[int, ...] = (200, 300, 400, 500, 600, 700, 800, 900, 1000)
    sampling_ks: tuple[int, ...] = tuple(range(2, 11))
    sampling_seeds: int = 3
    sampling_metrics: tuple[str, ...] = METRIC_IDS
    sampling_stratify: str = ""

    embedding_neighbors: int = 15
    embedding_dims: int = 2
    embedding_alpha: float = 0.5
    embedding_epochs: int = 30

    library_profile: str = "small"

    consensus_k: int = 0
    strategy_keep: int = 0
    strategy_reference: str = "outcome-set"

    stability_threshold: float = 0.5
    stability_exclude: tuple[str, ...] = ()
    stability_strategy: str = ""

    drift_breakdowns: tuple[str, ...] = ()
    drift_subject: str = "subject"
    drift_category: str = "category"

    def __post_init__(self) -> None:
        for name in (
            "months",
            "input_features",
            "synthetic_categorical_dims",
            "sampling_sizes",
            "sampling_ks",
            "sampling_metrics",
            "stability_exclude",
            "drift_breakdowns",
        ):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        self._validate()

    def _validate(self) -> None:
        if not self.months:
            raise ConfigError("months must name at least one period")
        for month in self.months:
            if not _PERIOD_RE.match(month):
                raise ConfigError(f"month {month!r} must look like YYYY-MM")
        if len(set(self.months)) != len(self.months):
            raise ConfigError("months must be distinct")
        if self.seed < 0 or self.workers < 0:
            raise ConfigError("seed and workers must be non-negative")
        if not self.output_dir:
            raise ConfigError("output_dir must be set")
        if self.input_tables and "{month}" not in self.input_tables:
            raise ConfigError("input_tables must contain a {month} placeholder")
        if self.input_tables and not self.input_schema:
            raise ConfigError("input_tables needs input_schema alongside it")

        if self.synthetic_n < self.synthetic_k or self.synthetic_k < 1:
            raise ConfigError("need synthetic_n >= synthetic_k >= 1")
        if not 0.0 <= self.synthetic_noise <= 1.0:
            raise ConfigError("synthetic_noise must lie in [0, 1]")
        if not 0 <= self.synthetic_stable_clusters <= self.synthetic_k:
            raise ConfigError("synthetic_stable_clusters must lie in [0, synthetic_k]")
        if any(v < 2 for v in self.synthetic_categorical_dims):
            raise ConfigError("categorical columns need at least 2 levels")
        if self.synthetic_numeric_dims < 1:
            raise ConfigError("synthetic_numeric_dims must be >= 1")

        if len(self.sampling_sizes) < 2 or any(
            b <= a for a, b in zip(self.sampling_sizes, self.sampling_sizes[1:])
        ):
            raise ConfigError("sampling_sizes must be at least two strictly ascending sizes")
        if any(s < 1 for s in self.sampling_sizes):
            raise ConfigError("sampling_sizes must be positive")
        if any(k < 2 for k in self.sampling_ks) or not self.sampling_ks:
            raise ConfigError("sampling_ks must all be >= 2")
        if self.sampling_seeds < 1:
            raise ConfigError("sampling_seeds must be >= 1")
        unknown = set(self.sampling_metrics) - set(METRIC_IDS)
        if unknown or not self.sampling_metrics:
            raise ConfigError(f"unknown metric ids: {sorted(unknown)}")

        if self.embedding_neighbors < 2:
            raise ConfigError("embedding_neighbors must be >= 2")
        if self.embedding_dims < 1:
            raise ConfigError("embedding_dims must be >= 1")
        if not 0.0 <= self.embedding_alpha <= 1.0:
            raise ConfigError("embedding_alpha must lie in [0, 1]")
        if self.embedding_epochs < 0:
            raise ConfigError("embedding_epochs must be >= 0")

        from .clusterers import default_grid

        try:
            default_grid(self.library_profile)
        except ValueError as err:
            raise ConfigError(str(err)) from None

        if self.consensus_k < 0 or self.strategy_keep < 0:
            raise ConfigError("consensus_k and strategy_keep must be non-negative")
        if self.strategy_keep == 1:
            raise ConfigError("strategy_keep must be 0 (default) or at least 2")
        if self.strategy_reference not in ("outcome-set", "library"):
            raise ConfigError(f"unknown strategy_reference {self.strategy_reference!r}")

        if self.stability_threshold < 0.0:
            raise ConfigError("stability_threshold must be non-negative")
        if self.stability_strategy:
            from .strategy import STRATEGY_IDS

            if self.stability_strategy not in STRATEGY_IDS:
                raise ConfigError(f"unknown stability_strategy {self.stability_strategy!r}")
        if not self.drift_subject or not self.drift_category:
            raise ConfigError("drift_subject and drift_category must be set")

    def as_dict(self) -> dict:
        out = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in out.items()}


def config_hash(config: RunConfig | Mapping) -> str:
    """Content hash over the canonical JSON form of the settings.

    Where outputs land and how many workers compute them never changes
    what gets written, so ``output_dir`` and ``workers`` stay out of the
    digest; equal hashes promise byte-identical report CSVs.
    """
    payload = config.as_dict() if isinstance(config, RunConfig) else dict(config)
    payload.pop("output_dir", None)
    payload.pop("workers", None)
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def derive_seed(root: int, *parts: object) -> int:
    """Stage seed split off the root seed; stable across runs and platforms."""
    text = "|".join([str(int(root))] + [str(p) for p in parts])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "big")


# TOML section -> config field prefix ("" for the bare [run] keys).
_SECTIONS = {
    "run": "",
    "input": "input_",
    "synthetic": "synthetic_",
    "sampling": "sampling_",
    "embedding": "embedding_",
    "library": "library_",
    "consensus": "consensus_",
    "strategy": "strategy_",
    "stability": "stability_",
    "drift": "drift_",
}


def _flatten_toml(raw: Mapping) -> dict:
    known = {f.name for f in fields(RunConfig)}
    flat: dict = {}
    for section, content in raw.items():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        if not isinstance(content, Mapping):
            raise ConfigError(f"[{section}] must be a table of keys")
        prefix = _SECTIONS[section]
        for key, value in content.items():
            name = f"{prefix}{key}"
            if name not in known:
                raise ConfigError(f"unknown config key {key!r} in [{section}]")
            flat[name] = value
    return flat


def load_config(path: str | Path | None = None, overrides: Mapping | None = None) -> RunConfig:
    """Build a RunConfig from an optional TOML file plus flat overrides.

    Overrides use the flat field names (``sampling_sizes``, not a
    section) and win over the file; None values are ignored so optional
    CLI flags can be passed straight through.
    """
    flat: dict = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            with path.open("rb") as handle:
                raw = tomllib.load(handle)
        except tomllib.TOMLDecodeError as err:
            raise ConfigError(f"config file {path} is not valid TOML: {err}") from None
        flat.update(_flatten_toml(raw))
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in {f.name for f in fields(RunConfig)}:
            raise ConfigError(f"unknown config field {key!r}")
        flat[key] = value
    try:
        return RunConfig(**flat)
    except TypeError as err:
        raise ConfigError(str(err)) from None
