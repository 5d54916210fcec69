"""Pipeline configuration files and the per-stage hash chain.

Every artifact records the hash of the configuration sections that shaped
it, cumulatively: the hash of a stage covers its own sections and those of
every upstream stage. A command recomputes the expected hash of its inputs
from the current configuration and refuses artifacts that disagree.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import yaml

from .features import StftConfig
from .signal import NormalizationConfig
from .sns import ScheduleEntry, SynthesisSchedule, read_schedule_table
from .toy import ToySignatureSpec, desk_specs
from .train import TrainConfig

BUILTIN = "builtin:"
SPLITS = ("train", "val", "test")

# sections folded into each stage's hash, in pipeline order; raw signatures
# are external input, so gen-toy has a standalone hash outside the chain
STAGES = {
    "normalize": ("normalization",),
    "synthesize": ("seed", "split", "synthesis"),
    "featurize": ("stft",),
    "train": ("model", "train"),
}
STAGE_ORDER = list(STAGES)


class ConfigError(ValueError):
    pass


def builtin_path(name: str) -> Path:
    return Path(str(resources.files("coldnilm") / "data" / name))


def _resolve(ref: str, base: Path) -> Path:
    if ref.startswith(BUILTIN):
        return builtin_path(ref[len(BUILTIN):])
    p = Path(ref)
    return p if p.is_absolute() else base / p


def stable_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class PipelineConfig:
    raw: dict
    base: Path  # directory relative references resolve against

    # -- typed views ---------------------------------------------------------

    @property
    def seed(self) -> int:
        return int(self.raw.get("seed", 0))

    @property
    def threads(self) -> int:
        return int(self.raw.get("threads", 1))

    def section(self, name: str) -> dict:
        value = self.raw.get(name)
        if not isinstance(value, dict):
            raise ConfigError(f"missing or malformed section {name!r}")
        return value

    def normalization(self) -> NormalizationConfig:
        return _build(NormalizationConfig, self.section("normalization"), "normalization")

    def stft(self) -> StftConfig:
        return _build(StftConfig, self.section("stft"), "stft")

    def train_config(self) -> TrainConfig:
        return _build(TrainConfig, dict(self.section("train"), seed=self.seed), "train")

    def model_section(self) -> dict:
        return dict(self.section("model"))

    def fractions(self) -> tuple[float, float, float]:
        fr = tuple(float(f) for f in self.section("split").get("fractions", (0.6, 0.1, 0.3)))
        if len(fr) != 3 or abs(sum(fr) - 1) > 1e-9 or min(fr) < 0:
            raise ConfigError(f"split fractions {fr} must be three non-negative numbers summing to 1")
        return fr

    def toy_specs(self) -> list[ToySignatureSpec]:
        ref = self.section("toy").get("specs", "desk")
        if ref == "desk":
            return desk_specs()
        path = _resolve(str(ref), self.base)
        try:
            items = yaml.safe_load(path.read_text())
            return [ToySignatureSpec.from_dict(d) for d in items]
        except FileNotFoundError as exc:
            raise ConfigError(f"toy spec file {path} not found") from exc
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(f"invalid toy spec file {path}: {exc}") from exc

    def schedule_entries(self, split: str) -> tuple[ScheduleEntry, ...]:
        refs = self.section("synthesis").get("schedules", {})
        if split not in refs:
            raise ConfigError(f"no schedule configured for split {split!r}")
        path = _resolve(str(refs[split]), self.base)
        try:
            return read_schedule_table(path)
        except FileNotFoundError as exc:
            raise ConfigError(f"schedule table {path} not found") from exc
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"malformed schedule table {path}: {exc}") from exc

    def schedule(self, split: str) -> SynthesisSchedule:
        syn = self.section("synthesis")
        try:
            return SynthesisSchedule(self.schedule_entries(split), t_obs=float(syn.get("t_obs", 5.0)),
                                     seed=derive_seed(self.seed, f"synthesis/{split}"),
                                     label_distribution=syn.get("label_distribution"),
                                     mode=syn.get("mode", "budget"))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def path(self, key: str, out: Path) -> Path:
        paths = self.raw.get("paths", {})
        return out / paths.get(key, key)

    # -- hashing -------------------------------------------------------------

    def _hashable_section(self, name: str):
        value = copy.deepcopy(self.raw.get(name))
        if name == "synthesis" and isinstance(value, dict):
            # hash schedule contents, not where they live
            value["schedules"] = {s: [[e.w, e.b_comb, e.b_repr] for e in self.schedule_entries(s)]
                                  for s in sorted(value.get("schedules", {}))}
        if name == "toy" and isinstance(value, dict):
            value["specs"] = [s.to_dict() for s in self.toy_specs()]
        return value

    def stage_hash(self, stage: str) -> str:
        """Cumulative hash of all sections up to and including ``stage``."""
        if stage == "gen-toy":
            return stable_hash({"seed": self.seed, "toy": self._hashable_section("toy")})
        if stage not in STAGES:
            raise KeyError(stage)
        sections = {}
        for s in STAGE_ORDER[:STAGE_ORDER.index(stage) + 1]:
            for name in STAGES[s]:
                sections[name] = self._hashable_section(name)
        return stable_hash(sections)


def derive_seed(seed: int, purpose: str) -> int:
    """Independent 32-bit seed for one purpose, stable across runs and platforms."""
    return int.from_bytes(hashlib.sha256(f"{seed}/{purpose}".encode()).digest()[:4], "little")


def _build(cls, values: dict, name: str):
    try:
        if "search_band" in values:
            values = dict(values, search_band=tuple(values["search_band"]))
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {name} section: {exc}") from exc


def load_config(path: str | Path | None = None, seed: int | None = None,
                threads: int | None = None) -> PipelineConfig:
    """Load a YAML config (the built-in desk config when ``path`` is None)."""
    path = builtin_path("desk.yaml") if path is None else _resolve(str(path), Path.cwd())
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file {path} not found") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file {path} is not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} must hold a mapping")
    if seed is not None:
        raw["seed"] = int(seed)
    if threads is not None:
        raw["threads"] = int(threads)
    cfg = PipelineConfig(raw, Path(path).parent)
    for split in SPLITS:
        if split in cfg.section("synthesis").get("schedules", {}):
            cfg.schedule_entries(split)
    cfg.normalization()
    cfg.stft()
    cfg.train_config()
    cfg.fractions()
    return cfg
