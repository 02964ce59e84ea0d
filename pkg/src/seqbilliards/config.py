"""JSON experiment configurations and bundled tables."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Optional

from .billiard import BilliardTable, FamilyParams, build_table
from .errors import ConfigError

KINDS = ("decay", "equi", "cone-check", "escape", "scatter", "lorentz")
NEEDS_TABLE = ("decay", "equi", "cone-check", "escape")

# defaults per experiment; unknown keys are rejected
DEFAULTS: dict[str, dict[str, Any]] = {
    "decay": {"horizon": 12, "n_orbits": 20000, "orbit_length": 500, "amplitude": 0.3},
    "equi": {"horizon": 8, "jitter": 0.0005, "kappa": 0.05, "samples": 400000, "n_rays": 50000},
    "cone-check": {"observable": "one", "n_curves": 48},
    "escape": {"hole": {"kind": "arc", "scatterer": 0, "arc": [0.0, 0.05]}, "N": 4, "n_macro": 20,
               "samples": 400000, "chunks": 4, "double": True},
    "scatter": {"obstacles": [], "box": [0.0, 1.0, 0.0, 1.0], "N": [1, 2, 4], "n_macro": 12,
                "particles": 100000, "window": [1, 8], "chunks": 4},
    "lorentz": {"r": 0.42, "rho": 0.25, "eps": 0.01, "N": 4, "environment_seed": 0, "walkers": 10000,
                "steps": 1000, "chunks": 4,
                "memory": {"N_values": [1, 2, 4], "m": 3, "n_max": 12, "walkers": 2000000}},
}
CONE_KEYS = ("a", "L", "A", "c", "sigma")
_POSITIVE_INT = ("horizon", "n_orbits", "orbit_length", "samples", "n_rays", "n_curves", "n_macro",
                 "particles", "chunks", "walkers", "steps")


def data_path(*parts: str) -> Path:
    return Path(str(resources.files("seqbilliards").joinpath("data", *parts)))


def resolve_table_path(ref: str, base: Optional[Path] = None) -> Path:
    """A bundled table name (``finite3``) or a path, relative to ``base`` if given."""
    bundled = data_path("tables", f"{ref}.json")
    if "/" not in ref and not ref.endswith(".json") and bundled.exists():
        return bundled
    p = Path(ref)
    if not p.is_absolute() and base is not None:
        p = base / p
    if not p.exists():
        raise ConfigError(f"table file {ref!r} not found")
    return p


def load_table_spec(path: Path) -> dict:
    try:
        spec = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read table {path}: {e}") from e
    scs = spec.get("scatterers")
    if not isinstance(scs, list) or not scs:
        raise ConfigError(f"{path}: 'scatterers' must be a non-empty list")
    for s in scs:
        if set(s) != {"center", "radius"} or len(s["center"]) != 2:
            raise ConfigError(f"{path}: each scatterer needs 'center' [x, y] and 'radius'")
    return spec


def table_from_spec(spec: dict, check_family: bool = True, n_rays: int = 400_000) -> BilliardTable:
    fam = FamilyParams(**spec["family"]) if spec.get("family") else None
    scs = [((float(s["center"][0]), float(s["center"][1])), float(s["radius"])) for s in spec["scatterers"]]
    tab = build_table(scs, fam if check_family else None, bool(spec.get("finite_horizon", True)), n_rays)
    if not check_family:
        tab.family = fam
    return tab


def load_table(ref: str, check_family: bool = True) -> BilliardTable:
    """Load a bundled or user table; the family bounds are checked unless disabled."""
    return table_from_spec(load_table_spec(resolve_table_path(ref)), check_family)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


def _merge(defaults: dict, given: dict, where: str) -> dict:
    out = copy.deepcopy(defaults)
    for k, v in given.items():
        if k not in defaults:
            raise ConfigError(f"unknown key {where}{k!r}")
        if isinstance(defaults[k], dict) and k != "hole":
            if not isinstance(v, dict):
                raise ConfigError(f"{where}{k!r} must be an object")
            out[k] = _merge(defaults[k], v, f"{where}{k}.")
        else:
            out[k] = v
    return out


@dataclass
class ExperimentConfig:
    experiment: str
    params: dict
    seed: int = 0
    table: Optional[str] = None
    table_spec: Optional[dict] = None
    cone: dict = field(default_factory=dict)
    out: Optional[str] = None

    def resolved(self) -> dict:
        """Everything that determines the outputs; this is what gets hashed."""
        return {"experiment": self.experiment, "params": self.params, "seed": self.seed,
                "table": self.table_spec, "cone": self.cone}

    @property
    def sha256(self) -> str:
        return config_hash(self.resolved())


def parse_config(raw: dict, base: Optional[Path] = None) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    extra = set(raw) - {"experiment", "table", "seed", "params", "cone", "out"}
    if extra:
        raise ConfigError(f"unknown top-level keys {sorted(extra)}")
    kind = raw.get("experiment")
    if kind not in KINDS:
        raise ConfigError(f"experiment must be one of {KINDS}, got {kind!r}")
    params = _merge(DEFAULTS[kind], raw.get("params", {}), "params.")
    for k in _POSITIVE_INT:
        if k in params and not (isinstance(params[k], int) and params[k] > 0):
            raise ConfigError(f"params.{k} must be a positive integer")
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or not 0 <= seed < 2 ** 64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    cone = raw.get("cone", {})
    if set(cone) - set(CONE_KEYS):
        raise ConfigError(f"unknown cone keys {sorted(set(cone) - set(CONE_KEYS))}")
    table = raw.get("table")
    spec = None
    if kind in NEEDS_TABLE:
        if not isinstance(table, str):
            raise ConfigError(f"experiment {kind} needs a 'table'")
        spec = load_table_spec(resolve_table_path(table, base))
    if kind == "scatter" and not params["obstacles"]:
        raise ConfigError("params.obstacles must list the box obstacles")
    return ExperimentConfig(kind, params, seed, table, spec, dict(cone), raw.get("out"))


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {path} not found")
    try:
        raw = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: {e}") from e
    return parse_config(raw, p.parent)


def default_config(kind: str) -> ExperimentConfig:
    return load_config(data_path("configs", f"{kind}.json"))
