"""Experiment configuration and run manifests.

One JSON file drives a whole experiment: nested sections map onto the
parameter dataclasses of the stage modules, a schema version tag guards
against stale files, and unknown keys are rejected rather than ignored
so typos fail loudly. The sha256 of the canonical JSON form identifies
a configuration in manifests and output directories.

Seeding: ``seed`` drives every analysis stage; ``es.seed`` drives
training separately so analysis variants can re-run against one trained
checkpoint without re-deriving it.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field

from .bpf import BpfConfig
from .es import EsConfig
from .maze import EnvConfig
from .policy import GRU, VANILLA

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Malformed, unknown-key, wrong-version, or unresolvable config."""


@dataclass
class PolicySection:
    arch: str = GRU
    hidden_dim: int = 64
    init_std: float = 0.1

    def __post_init__(self):
        if self.arch not in (GRU, VANILLA):
            raise ConfigError(f"unknown arch {self.arch!r}")
        if self.hidden_dim < 1:
            raise ConfigError("hidden_dim must be >= 1")


@dataclass
class FtliSection:
    n_tasks: int = 50
    window: int = 1000
    eps: float = 1e-6
    burn_in: int = 200
    convergence_budget: int = 2000


@dataclass
class AcfSection:
    n_probes: int = 10000        # single-task consistency census
    warmup: int = 1000
    eps_closure: float = 1e-4
    dedup_tol: float = 1e-3
    min_repeats: int = 3
    library_tasks: int = 50      # converged tasks in the cycle library
    library_probes: int = 128    # probes per library task


@dataclass
class CcaSection:
    k_x: int = 50
    k_y: int = 50
    k_cca: int = 10
    ridge: float = 1e-6
    n_pairs: int = 2000
    n_shuffles: int = 200


@dataclass
class CounterfactualSection:
    cutoff_k: int = 3
    noise_std: float = 1.0
    trial_budget: int = 1000
    n_tasks: int = 100


@dataclass
class ExperimentConfig:
    schema_version: int = SCHEMA_VERSION
    seed: int = 0
    out_dir: str = "runs/out"
    checkpoint_path: str = ""   # optional pre-trained policy input
    env: EnvConfig = field(default_factory=EnvConfig)
    policy: PolicySection = field(default_factory=PolicySection)
    es: EsConfig = field(default_factory=EsConfig)
    ftli: FtliSection = field(default_factory=FtliSection)
    acf: AcfSection = field(default_factory=AcfSection)
    bpf: BpfConfig = field(default_factory=BpfConfig)
    cca: CcaSection = field(default_factory=CcaSection)
    counterfactual: CounterfactualSection = field(default_factory=CounterfactualSection)


_SECTIONS = {
    "env": EnvConfig,
    "policy": PolicySection,
    "es": EsConfig,
    "ftli": FtliSection,
    "acf": AcfSection,
    "bpf": BpfConfig,
    "cca": CcaSection,
    "counterfactual": CounterfactualSection,
}

_SCALARS = ("schema_version", "seed", "out_dir", "checkpoint_path")


def _build_section(name: str, cls, payload) -> object:
    if not isinstance(payload, dict):
        raise ConfigError(f"section {name!r} must be an object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(payload) - known)
    if unknown:
        raise ConfigError(f"unknown keys in section {name!r}: {unknown}")
    try:
        return cls(**payload)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid section {name!r}: {e}") from e


def config_from_dict(d: dict) -> ExperimentConfig:
    if not isinstance(d, dict):
        raise ConfigError("config root must be an object")
    if "schema_version" not in d:
        raise ConfigError("missing schema_version tag")
    if d["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(f"schema_version {d['schema_version']!r} unsupported, "
                          f"expected {SCHEMA_VERSION}")
    unknown = sorted(set(d) - set(_SCALARS) - set(_SECTIONS))
    if unknown:
        raise ConfigError(f"unknown top-level keys: {unknown}")
    kw = {k: d[k] for k in _SCALARS if k in d}
    for name, cls in _SECTIONS.items():
        if name in d:
            kw[name] = _build_section(name, cls, d[name])
    return ExperimentConfig(**kw)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return dataclasses.asdict(cfg)


def canonical_json(obj) -> str:
    """Stable serialization: sorted keys, no whitespace drift."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(canonical_json(config_to_dict(cfg)).encode()).hexdigest()


def load_config(path: str) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as f:
        try:
            d = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: not valid JSON ({e})") from e
    cfg = config_from_dict(d)
    validate_paths(cfg, base_dir=os.path.dirname(os.path.abspath(path)))
    return cfg


def save_config(path: str, cfg: ExperimentConfig) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(config_to_dict(cfg), f, indent=2, sort_keys=True)
        f.write("\n")


def validate_paths(cfg: ExperimentConfig, base_dir: str = ".") -> None:
    """Referenced input files must exist when the config is loaded."""
    p = cfg.checkpoint_path
    if p:
        resolved = p if os.path.isabs(p) else os.path.join(base_dir, p)
        if not os.path.isfile(resolved):
            raise ConfigError(f"checkpoint_path does not resolve: {p!r}")


def file_sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    config_hash: str
    tool_version: str
    artifacts: dict = field(default_factory=dict)   # relative path -> sha256
    timings: dict = field(default_factory=dict)     # stage -> seconds
    schema_version: int = SCHEMA_VERSION

    def add_artifact(self, root: str, rel_path: str) -> None:
        self.artifacts[rel_path] = file_sha256(os.path.join(root, rel_path))


def write_manifest(path: str, manifest: RunManifest) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(dataclasses.asdict(manifest), f, indent=2, sort_keys=True)
        f.write("\n")


def load_manifest(path: str) -> RunManifest:
    with open(path, "r", encoding="utf-8") as f:
        d = json.load(f)
    known = {f.name for f in dataclasses.fields(RunManifest)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ConfigError(f"unknown manifest keys: {unknown}")
    return RunManifest(**d)


def verify_manifest(manifest: RunManifest, root: str) -> list:
    """Names of artifacts whose on-disk checksum no longer matches."""
    bad = []
    for rel, digest in sorted(manifest.artifacts.items()):
        full = os.path.join(root, rel)
        if not os.path.isfile(full) or file_sha256(full) != digest:
            bad.append(rel)
    return bad
