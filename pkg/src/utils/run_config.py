"""
PackAudit - Run configuration and presets
Resolves defaults, presets, config files, environment and CLI flags into one
validated RunConfig
"""

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Set

from ..core.audit_stream import StreamConfig
from ..core.errors import ConfigInvalid, PackAuditError
from ..core.fleet import FleetConfig
from ..core.forest import ForestConfig
from ..core.preprocess import PreprocessConfig, SmoteConfig
from .log import get_logger

logger = get_logger(__name__)

ENV_PREFIX = "PACKAUDIT_"
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


@dataclass
class PathsConfig:
    """Where inputs come from and artifacts go (None = inside out)"""
    out: str = "runs/default"
    alarms: Optional[str] = None
    work_orders: Optional[str] = None
    model: Optional[str] = None

    @property
    def out_dir(self) -> Path:
        return Path(self.out)

    @property
    def alarms_path(self) -> Path:
        return Path(self.alarms) if self.alarms else self.out_dir / "alarms.csv"

    @property
    def work_orders_path(self) -> Path:
        return Path(self.work_orders) if self.work_orders else self.out_dir / "work_orders.csv"

    @property
    def manifest_path(self) -> Path:
        return self.alarms_path.parent / "fleet_manifest.json"

    @property
    def model_path(self) -> Path:
        return Path(self.model) if self.model else self.out_dir / "forest.model"

    @property
    def traces_path(self) -> Path:
        return self.out_dir / "traces.csv"

    @property
    def audit_manifest_path(self) -> Path:
        return self.out_dir / "audit_manifest.json"


@dataclass
class RunConfig:
    """Everything one pipeline run needs"""
    name: str = "custom"
    description: str = ""
    seed: int = 0
    jobs: int = 1
    log_level: str = "INFO"
    write_svg: bool = True
    paths: PathsConfig = field(default_factory=PathsConfig)
    fleet: FleetConfig = field(default_factory=FleetConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    smote: SmoteConfig = field(default_factory=SmoteConfig)
    forest: ForestConfig = field(default_factory=ForestConfig)
    stream: StreamConfig = field(default_factory=StreamConfig)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RunConfig":
        """Strict construction: unknown keys anywhere are rejected"""
        data = dict(data)
        _reject_unknown(cls, data, "run")
        sections = {
            "paths": PathsConfig,
            "fleet": FleetConfig,
            "preprocess": PreprocessConfig,
            "smote": SmoteConfig,
            "forest": ForestConfig,
        }
        try:
            for key, klass in sections.items():
                if key in data:
                    _reject_unknown(klass, data[key], key)
                    data[key] = klass(**data[key])
            if "stream" in data:
                data["stream"] = StreamConfig.from_dict(data["stream"])
            return cls(**data)
        except PackAuditError as e:
            raise ConfigInvalid(e.message)
        except TypeError as e:
            raise ConfigInvalid(str(e))

    def apply_seed(self, keep: Iterable[str] = ()) -> "RunConfig":
        """Push the master seed into every nested seed not named in `keep`"""
        keep = set(keep)
        targets = {"fleet": self.fleet, "smote": self.smote,
                   "forest": self.forest, "stream.mcd": self.stream.mcd}
        for section, target in targets.items():
            if section not in keep:
                target.seed = self.seed
        return self

    def validate(self) -> "RunConfig":
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigInvalid(f"seed must be a non-negative integer, got {self.seed}")
        if not isinstance(self.jobs, int) or self.jobs == 0 or self.jobs < -1:
            raise ConfigInvalid(f"jobs must be a positive integer or -1, got {self.jobs}")
        if str(self.log_level).upper() not in LOG_LEVELS:
            raise ConfigInvalid(f"log_level must be one of {LOG_LEVELS}")
        try:
            self.fleet.validate()
            self.preprocess.validate()
            self.smote.validate()
            self.forest.validate()
            self.stream.validate()
        except PackAuditError as e:
            raise ConfigInvalid(e.message)
        except TypeError as e:
            raise ConfigInvalid(f"wrongly typed setting: {e}")
        _check_writable(self.paths.out_dir)
        return self


def _reject_unknown(klass, data: Any, section: str) -> None:
    if not isinstance(data, Mapping):
        raise ConfigInvalid(f"section {section!r} must be a mapping")
    unknown = set(data) - {f.name for f in fields(klass)}
    if unknown:
        raise ConfigInvalid(f"unknown {section} keys: {sorted(unknown)}")


def _check_writable(out_dir: Path) -> None:
    existing = out_dir
    while not existing.exists():
        if existing.parent == existing:
            break
        existing = existing.parent
    if existing.exists() and not existing.is_dir():
        raise ConfigInvalid(f"output path {existing} is not a directory")
    if existing.exists() and not os.access(existing, os.W_OK):
        raise ConfigInvalid(f"output directory {existing} is not writable")


def deep_merge(base: Dict[str, Any], update: Mapping[str, Any]) -> Dict[str, Any]:
    """Recursively overlay update onto base (in place) and return base"""
    for key, value in update.items():
        if isinstance(value, Mapping) and isinstance(base.get(key), dict):
            deep_merge(base[key], value)
        else:
            base[key] = value
    return base


def parse_assignment(text: str) -> Dict[str, Any]:
    """'stream.window=40' -> {'stream': {'window': 40}}"""
    if "=" not in text:
        raise ConfigInvalid(f"--set expects section.key=value, got {text!r}")
    path, raw = text.split("=", 1)
    keys = [k for k in path.strip().split(".") if k]
    if not keys:
        raise ConfigInvalid(f"--set has an empty key in {text!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    nested: Dict[str, Any] = {keys[-1]: value}
    for key in reversed(keys[:-1]):
        nested = {key: nested}
    return nested


def load_config_file(path) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise ConfigInvalid(f"config file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigInvalid(f"{path} is not valid JSON: {e}")
    if not isinstance(data, dict):
        raise ConfigInvalid(f"{path} must hold a JSON object")
    return data


def _pinned_seeds(layer: Mapping[str, Any]) -> Set[str]:
    """Nested seeds a layer sets by itself; the master seed leaves them alone"""
    pinned = set()
    for section in ("fleet", "smote", "forest"):
        if isinstance(layer.get(section), Mapping) and "seed" in layer[section]:
            pinned.add(section)
    stream = layer.get("stream")
    if isinstance(stream, Mapping) and isinstance(stream.get("mcd"), Mapping) and "seed" in stream["mcd"]:
        pinned.add("stream.mcd")
    return pinned


def _env_int(env: Mapping[str, str], key: str) -> Optional[int]:
    value = env.get(ENV_PREFIX + key)
    if value is None or value == "":
        return None
    try:
        return int(value)
    except ValueError:
        raise ConfigInvalid(f"{ENV_PREFIX}{key} must be an integer, got {value!r}")


class PresetManager:
    """Built-in and on-disk run presets (partial RunConfig dictionaries)"""

    BUILTIN: Dict[str, Dict[str, Any]] = {
        "full": {
            "name": "full",
            "description": "23 machines x 1000 days, 500 trees, warm-up 30",
            "fleet": {"n_machines": 23, "n_days": 1000, "positive_rate": 0.013},
            "forest": {"n_trees": 500, "mtry": 17, "threshold_criterion": "f1"},
            "stream": {"warmup": 30, "window": 30, "embed_dim": 1},
        },
        "smoke": {
            "name": "smoke",
            "description": "Small fleet for a quick end-to-end check",
            "fleet": {"n_machines": 3, "n_days": 240, "positive_rate": 0.05},
            "forest": {"n_trees": 40},
            "stream": {"mcd": {"n_starts": 10}},
            "write_svg": False,
        },
    }

    def __init__(self, presets_dir: Optional[Path] = None):
        if presets_dir is None:
            self.presets_dir = Path(__file__).parent.parent.parent / "presets"
        else:
            self.presets_dir = Path(presets_dir)
        self._presets: Dict[str, Dict[str, Any]] = {k: dict(v) for k, v in self.BUILTIN.items()}
        self._load_user_presets()

    def _load_user_presets(self):
        if not self.presets_dir.is_dir():
            return
        for preset_file in sorted(self.presets_dir.glob("*.json")):
            try:
                data = load_config_file(preset_file)
            except ConfigInvalid as e:
                logger.warning("preset skipped", file=preset_file.name, reason=e.message)
                continue
            self._presets[data.get("name", preset_file.stem)] = data

    def get_preset(self, name: str) -> Dict[str, Any]:
        if name not in self._presets:
            raise ConfigInvalid(f"unknown preset {name!r}; available: {', '.join(self.names())}")
        return json.loads(json.dumps(self._presets[name]))

    def names(self) -> List[str]:
        return sorted(self._presets)


def resolve_config(preset: Optional[str] = None, config_path: Optional[str] = None,
                   assignments: Sequence[str] = (), seed: Optional[int] = None,
                   jobs: Optional[int] = None, out: Optional[str] = None,
                   machines: Optional[int] = None, days: Optional[int] = None,
                   log_level: Optional[str] = None, env: Optional[Mapping[str, str]] = None,
                   presets: Optional[PresetManager] = None) -> RunConfig:
    """
    Build the run config; later layers win

    defaults < preset < config file < PACKAUDIT_* environment < flags

    Raises:
        ConfigInvalid: unknown key, bad value or unwritable output directory
    """
    env = os.environ if env is None else env
    merged = RunConfig().to_dict()
    pinned: Set[str] = set()

    if preset:
        layer = (presets or PresetManager()).get_preset(preset)
        pinned |= _pinned_seeds(layer)
        deep_merge(merged, layer)
    config_path = config_path or env.get(ENV_PREFIX + "CONFIG") or None
    if config_path:
        layer = load_config_file(config_path)
        pinned |= _pinned_seeds(layer)
        deep_merge(merged, layer)

    env_layer: Dict[str, Any] = {}
    for key, target in (("SEED", "seed"), ("JOBS", "jobs")):
        value = _env_int(env, key)
        if value is not None:
            env_layer[target] = value
    if env.get(ENV_PREFIX + "OUT"):
        env_layer["paths"] = {"out": env[ENV_PREFIX + "OUT"]}
    if env.get(ENV_PREFIX + "LOG_LEVEL"):
        env_layer["log_level"] = env[ENV_PREFIX + "LOG_LEVEL"].upper()
    deep_merge(merged, env_layer)

    flags: Dict[str, Any] = {}
    if seed is not None:
        flags["seed"] = seed
    if jobs is not None:
        flags["jobs"] = jobs
    if log_level is not None:
        flags["log_level"] = log_level.upper()
    if out is not None:
        flags["paths"] = {"out": out}
    if machines is not None or days is not None:
        flags["fleet"] = {k: v for k, v in (("n_machines", machines), ("n_days", days)) if v is not None}
    deep_merge(merged, flags)
    for text in assignments:
        layer = parse_assignment(text)
        pinned |= _pinned_seeds(layer)
        deep_merge(merged, layer)

    cfg = RunConfig.from_dict(merged).apply_seed(keep=pinned)
    return cfg.validate()


def write_resolved_config(cfg: RunConfig, out_dir: Optional[Path] = None) -> Path:
    out_dir = Path(out_dir or cfg.paths.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "resolved_config.json"
    with open(path, "w", encoding="utf-8") as f:
        json.dump(cfg.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
    return path
