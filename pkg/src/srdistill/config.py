"""Pipeline configuration: INI file with one section per stage, ``section.key`` overrides.

Every field has a default, so an empty file (or no file) is a valid config.
Validation happens at parse time and the error names the offending field.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
from pathlib import Path
from typing import Any, Iterable, Optional

import numpy as np


class ConfigError(ValueError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclasses.dataclass(frozen=True)
class RunSection:
    seed: int = 0
    out_dir: str = "runs/default"
    log_level: str = "INFO"


@dataclasses.dataclass(frozen=True)
class CorpusSection:
    n_images: int = 200
    image_size: int = 64
    seed: int = 0


@dataclasses.dataclass(frozen=True)
class DataSection:
    image_dir: str = "corpus"
    # the last `holdout` images in sorted filename order form the SR test split
    holdout: int = 40


@dataclasses.dataclass(frozen=True)
class SelectSection:
    patch_size: int = 32
    stride: int = 16
    threshold_mode: str = "fixed"
    threshold_db: float = 23.0
    kernel_a: float = -0.5
    antialias: bool = True


@dataclasses.dataclass(frozen=True)
class ClusterSection:
    k: int = 7
    max_iter: int = 100
    n_restart: int = 1
    # "builtin" or a path to an external feature file
    features: str = "builtin"


@dataclasses.dataclass(frozen=True)
class DistillSection:
    steps: int = 8000
    batch_size: int = 8
    lr: float = 1e-3
    T: int = 100
    # 1000-step DDPM range rescaled to T=100 so that alpha_bar_T ~ 0
    beta_start: float = 1e-3
    beta_end: float = 0.2
    lambda_r: float = 0.002
    lambda_d: float = 0.008
    lambda_sr: float = 1.0
    bank_m: int = 64
    bank_d: int = 64
    width: int = 16
    emb_dim: int = 16
    predict_mode: str = "direct"


@dataclasses.dataclass(frozen=True)
class SampleSection:
    sizes: tuple = (16,)
    ddim_steps: int = 50
    clip_denoised: bool = True


@dataclasses.dataclass(frozen=True)
class SRSection:
    epochs: int = 32
    n_seeds: int = 3
    strategies: tuple = ("distilled", "random_crop", "threshold_crop")
    width: int = 32
    lr: float = 1e-3
    batch_size: int = 4
    augment: bool = True
    budget_factor: int = 100


SECTIONS = {
    "run": RunSection,
    "corpus": CorpusSection,
    "data": DataSection,
    "select": SelectSection,
    "cluster": ClusterSection,
    "distill": DistillSection,
    "sample": SampleSection,
    "sr": SRSection,
}

STRATEGIES = ("distilled", "random_crop", "threshold_crop")


def _parse_value(raw: str, default: Any, field: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            if default and isinstance(default[0], int):
                return tuple(int(s) for s in items)
            return tuple(items)
    except ValueError:
        raise ConfigError(field, f"cannot parse {raw!r} as {type(default).__name__}") from None
    return raw


def _format_value(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclasses.dataclass(frozen=True)
class PipelineConfig:
    run: RunSection = RunSection()
    corpus: CorpusSection = CorpusSection()
    data: DataSection = DataSection()
    select: SelectSection = SelectSection()
    cluster: ClusterSection = ClusterSection()
    distill: DistillSection = DistillSection()
    sample: SampleSection = SampleSection()
    sr: SRSection = SRSection()

    def __post_init__(self):
        validate(self)

    @property
    def out_dir(self) -> Path:
        return Path(self.run.out_dir)

    def get(self, dotted: str):
        section, key = _split_key(dotted)
        return getattr(getattr(self, section), key)

    def to_text(self) -> str:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        for name in SECTIONS:
            sec = getattr(self, name)
            parser[name] = {f.name: _format_value(getattr(sec, f.name)) for f in dataclasses.fields(sec)}
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    def flat(self) -> dict[str, str]:
        return {f"{name}.{f.name}": _format_value(getattr(getattr(self, name), f.name))
                for name in SECTIONS for f in dataclasses.fields(SECTIONS[name])}

    def diffusion_config(self):
        from .diffusion import DiffusionConfig

        d = self.distill
        return DiffusionConfig(
            image_size=self.select.patch_size, width=d.width, emb_dim=d.emb_dim, n_classes=self.cluster.k,
            T=d.T, beta_start=d.beta_start, beta_end=d.beta_end, lambda_r=d.lambda_r,
            lambda_d=d.lambda_d, lambda_sr=d.lambda_sr, bank_m=d.bank_m, bank_d=d.bank_d,
            lr=d.lr, batch_size=d.batch_size, predict_mode=d.predict_mode,
            kernel_a=self.select.kernel_a, antialias=self.select.antialias)

    def sr_config(self):
        from .srtrain import SRConfig

        return SRConfig(width=self.sr.width, kernel_a=self.select.kernel_a, lr=self.sr.lr,
                        batch_size=self.sr.batch_size, augment=self.sr.augment)


def _split_key(dotted: str) -> tuple[str, str]:
    section, _, key = dotted.partition(".")
    if section not in SECTIONS or not key:
        raise ConfigError(dotted, "unknown section (expected one of " + ", ".join(SECTIONS) + ")")
    if key not in {f.name for f in dataclasses.fields(SECTIONS[section])}:
        raise ConfigError(dotted, "unknown key")
    return section, key


def _require(cond: bool, field: str, message: str) -> None:
    if not cond:
        raise ConfigError(field, message)


def validate(cfg: PipelineConfig) -> None:
    r, c, d, s, k, t, sa, sr = (cfg.run, cfg.corpus, cfg.data, cfg.select, cfg.cluster,
                                cfg.distill, cfg.sample, cfg.sr)
    _require(r.seed >= 0, "run.seed", "must be >= 0")
    _require(r.log_level.upper() in ("DEBUG", "INFO", "WARNING", "ERROR"), "run.log_level", "unknown level")
    _require(c.n_images >= 1, "corpus.n_images", "must be >= 1")
    _require(c.image_size >= 16 and c.image_size % 4 == 0, "corpus.image_size", "must be a multiple of 4, >= 16")
    _require(d.holdout >= 1, "data.holdout", "must be >= 1")
    _require(s.patch_size >= 16 and s.patch_size % 4 == 0, "select.patch_size",
             "must be a multiple of 4 and >= 16")
    _require(1 <= s.stride <= s.patch_size, "select.stride", "must lie in [1, patch_size]")
    _require(s.threshold_mode in ("fixed", "median"), "select.threshold_mode", "must be 'fixed' or 'median'")
    _require(np.isfinite(s.threshold_db), "select.threshold_db", "must be finite")
    _require(-1.0 <= s.kernel_a < 0.0, "select.kernel_a", "must lie in [-1, 0)")
    _require(k.k >= 1, "cluster.k", "must be >= 1")
    _require(k.max_iter >= 1, "cluster.max_iter", "must be >= 1")
    _require(k.n_restart >= 1, "cluster.n_restart", "must be >= 1")
    _require(t.steps >= 0, "distill.steps", "must be >= 0")
    _require(t.batch_size >= 1, "distill.batch_size", "must be >= 1")
    _require(t.lr >= 0, "distill.lr", "must be >= 0")
    _require(t.T >= 2, "distill.T", "must be >= 2")
    _require(0 < t.beta_start <= t.beta_end < 1, "distill.beta_start", "need 0 < beta_start <= beta_end < 1")
    for name in ("lambda_r", "lambda_d", "lambda_sr"):
        v = getattr(t, name)
        _require(np.isfinite(v) and v >= 0, f"distill.{name}", "must be finite and >= 0")
    _require(t.bank_m >= 1, "distill.bank_m", "must be >= 1")
    _require(t.bank_d >= 1, "distill.bank_d", "must be >= 1")
    _require(t.width >= 1, "distill.width", "must be >= 1")
    _require(t.emb_dim >= 2 and t.emb_dim % 2 == 0, "distill.emb_dim", "must be even and >= 2")
    _require(t.predict_mode in ("direct", "scaled"), "distill.predict_mode", "must be 'direct' or 'scaled'")
    _require(len(sa.sizes) >= 1 and all(n >= 1 for n in sa.sizes), "sample.sizes", "need positive sizes")
    _require(1 <= sa.ddim_steps <= t.T, "sample.ddim_steps", "must lie in [1, distill.T]")
    _require(sr.epochs >= 0, "sr.epochs", "must be >= 0")
    _require(sr.n_seeds >= 1, "sr.n_seeds", "must be >= 1")
    _require(len(sr.strategies) >= 1 and set(sr.strategies) <= set(STRATEGIES), "sr.strategies",
             "must be a subset of " + ", ".join(STRATEGIES))
    _require(sr.width >= 1, "sr.width", "must be >= 1")
    _require(sr.lr > 0, "sr.lr", "must be > 0")
    _require(sr.batch_size >= 1, "sr.batch_size", "must be >= 1")
    _require(sr.budget_factor >= 1, "sr.budget_factor", "must be >= 1")


def from_mapping(values: dict[str, str]) -> PipelineConfig:
    """Build a config from ``section.key -> raw string`` pairs."""
    grouped: dict[str, dict[str, Any]] = {name: {} for name in SECTIONS}
    for dotted, raw in values.items():
        section, key = _split_key(dotted)
        default = getattr(SECTIONS[section](), key)
        grouped[section][key] = _parse_value(str(raw), default, dotted)
    return PipelineConfig(**{name: SECTIONS[name](**kw) for name, kw in grouped.items()})


def parse_overrides(pairs: Iterable[str]) -> dict[str, str]:
    out = {}
    for item in pairs:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(item, "override must look like section.key=value")
        out[key.strip()] = value.strip()
    return out


def load(path: Optional[Path] = None, overrides: Iterable[str] = ()) -> PipelineConfig:
    values: dict[str, str] = {}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from exc
        except configparser.Error as exc:
            raise ConfigError("config", f"malformed config file: {exc}") from exc
        for section in parser.sections():
            for key, raw in parser[section].items():
                values[f"{section}.{key}"] = raw
    values.update(parse_overrides(overrides))
    return from_mapping(values)


def substream(root_seed: int, name: str) -> np.random.SeedSequence:
    """Independent seed sequence for a named stage, e.g. ``"distill"`` or ``"sr/random_crop/2"``.

    The name is hashed so adding a stage never shifts the streams of the others.
    """
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    key = tuple(int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4))
    return np.random.SeedSequence(root_seed, spawn_key=key)


def rng_for(root_seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(substream(root_seed, name))


def seed_for(root_seed: int, name: str) -> int:
    """Plain integer seed for APIs that take one (63 bits of the named stream)."""
    return int(substream(root_seed, name).generate_state(2, np.uint64)[0] >> np.uint64(1))
