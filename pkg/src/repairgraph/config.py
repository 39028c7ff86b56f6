"""Runtime configuration: defaults < config file < environment < flags."""

from __future__ import annotations

import json
import os
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping, Optional

from .llm import BackendConfig

CONFIG_ENV = "REPAIRGRAPH_CONFIG"
DEFAULT_CONFIG_PATH = Path("~/.config/repairgraph/config.json")

# environment variable -> (section, field, parser)
_ENV_FIELDS = {
    "REPAIRGRAPH_BASE_URL": ("backend", "base_url", str),
    "REPAIRGRAPH_MODEL": ("backend", "model_id", str),
    "REPAIRGRAPH_API_KEY_ENV": ("backend", "api_key_env", str),
    "REPAIRGRAPH_MODE": ("backend", "mode", str),
    "REPAIRGRAPH_MEMORY_PATH": (None, "memory_path", str),
    "REPAIRGRAPH_INTERPRETER": (None, "interpreter_path", str),
    "REPAIRGRAPH_REPORT_DIR": (None, "report_dir", str),
    "REPAIRGRAPH_K": (None, "k", int),
    "REPAIRGRAPH_TAU": (None, "tau", float),
    "REPAIRGRAPH_TIMEOUT": (None, "default_timeout_s", float),
    "REPAIRGRAPH_MAX_REPAIRS": (None, "default_max_repairs", int),
}


class ConfigError(ValueError):
    pass


@dataclass
class CliConfig:
    backend: BackendConfig = field(default_factory=BackendConfig)
    memory_path: str = ".repairgraph/memory.json"
    interpreter_path: str = field(default_factory=lambda: sys.executable)
    k: int = 5
    tau: float = 0.35
    default_timeout_s: float = 10.0
    default_max_repairs: int = 5
    report_dir: str = "reports"

    def validate(self) -> list[str]:
        problems = []
        if self.k < 1:
            problems.append("k must be >= 1")
        if not -1.0 <= self.tau <= 1.0:
            problems.append("tau should lie in [-1, 1]")
        if not self.default_timeout_s > 0:
            problems.append("default_timeout_s must be positive")
        if self.default_max_repairs < 1:
            problems.append("default_max_repairs must be >= 1")
        if not self.memory_path:
            problems.append("memory_path is empty")
        return problems

    def to_json(self) -> dict[str, Any]:
        return asdict(self)


def _merge(config: CliConfig, data: Mapping[str, Any], origin: str) -> CliConfig:
    known = {f.name for f in fields(CliConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{origin}: unknown keys {sorted(unknown)}")
    updates = {k: v for k, v in data.items() if k != "backend"}
    backend = config.backend
    if "backend" in data:
        backend_known = {f.name for f in fields(BackendConfig)}
        extra = set(data["backend"]) - backend_known
        if extra:
            raise ConfigError(f"{origin}: unknown backend keys {sorted(extra)}")
        try:
            backend = replace(backend, **data["backend"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{origin}: {exc}") from exc
    return replace(config, backend=backend, **updates)


def load_config(
    path: Optional[str] = None,
    env: Optional[Mapping[str, str]] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> CliConfig:
    """Resolve configuration.

    ``path`` (the --config flag) wins over ``$REPAIRGRAPH_CONFIG``, which wins
    over the conventional location. A missing conventional file is fine; a
    missing explicit file is an error.
    """
    env = os.environ if env is None else env
    config = CliConfig()

    explicit = path or env.get(CONFIG_ENV)
    file_path = Path(explicit).expanduser() if explicit else DEFAULT_CONFIG_PATH.expanduser()
    if file_path.exists():
        try:
            data = json.loads(file_path.read_text(encoding="utf-8"))
        except ValueError as exc:
            raise ConfigError(f"{file_path}: invalid JSON ({exc})") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{file_path}: expected a JSON object")
        config = _merge(config, data, str(file_path))
    elif explicit:
        raise ConfigError(f"config file {file_path} does not exist")

    from_env: dict[str, Any] = {}
    for var, (section, name, parse) in _ENV_FIELDS.items():
        if var in env:
            try:
                value = parse(env[var])
            except ValueError as exc:
                raise ConfigError(f"{var}: {exc}") from exc
            if section:
                from_env.setdefault(section, {})[name] = value
            else:
                from_env[name] = value
    config = _merge(config, from_env, "environment")
    if overrides:
        config = _merge(config, {k: v for k, v in overrides.items() if v is not None}, "flags")
    return config
