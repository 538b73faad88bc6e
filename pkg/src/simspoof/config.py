"""Training configuration and its flat ``key = value`` file format."""

from __future__ import annotations

import dataclasses
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .data import SynthConfig
from .encoder import EncoderConfig
from .episodes import MATCH_GRANULARITIES
from .losses import AamConfig

LOSS_MODES = ("wce", "aam", "aam+mse")
DTYPES = ("float32", "float64")


class ConfigFileError(ValueError):
    pass


@dataclass
class TrainConfig:
    # encoder
    segment_len: int = 64600
    sample_rate: int = 16000
    sinc_filters: int = 70
    sinc_kernel: int = 129
    sinc_stride: int = 1
    sinc_abs: bool = False
    sinc_pool: int = 1
    pre_emphasis: float = 0.0
    min_low_hz: float = 30.0
    min_band_hz: float = 10.0
    num_blocks: int = 6
    filters_per_block: list = field(default_factory=lambda: [32, 32, 64, 64, 64, 64])
    gru_hidden: int = 128
    embed_dim: int = 128
    attention_kind: str = "simam"
    simam_lambda: float = 1e-4
    se_reduction: int = 4
    cbam_reduction: int = 4
    cbam_kernel: int = 7
    # objective
    loss_mode: str = "aam+mse"
    aam_scale: float = 32.0
    margin_bonafide: float = 0.2
    margin_spoof: float = 0.9
    weight_bonafide: float = 0.9
    weight_spoof: float = 0.1
    conventional_weighting: bool = False
    lambda_balance: float = 1.0
    match_granularity: str = "binary"
    relation_hidden: int = 128
    # optimization
    n_way: int = 6
    k_shot: int = 2
    batch_size: int = 16
    lr: float = 1e-4
    lr_floor: float = 0.0
    epochs: int = 100
    steps_per_epoch: int = 0  # 0 means one pass over the training partition
    seed: int = 0
    dtype: str = "float32"
    # data: "synthetic" or a directory holding <partition>.txt protocols and wav/
    data: str = "synthetic"
    synth_train_attacks: int = 6
    synth_eval_attacks: int = 2
    synth_per_class: int = 20
    synth_dev_per_class: int = 10
    synth_eval_per_class: int = 10
    synth_utterance_len: int = 0
    synth_seed: int = 0
    out_dir: str = "runs/default"

    def __post_init__(self):
        self.filters_per_block = [int(v) for v in self.filters_per_block]
        if self.loss_mode not in LOSS_MODES:
            raise ConfigFileError(f"loss_mode must be one of {LOSS_MODES}")
        if self.dtype not in DTYPES:
            raise ConfigFileError(f"dtype must be one of {DTYPES}")
        if self.match_granularity not in MATCH_GRANULARITIES:
            raise ConfigFileError(f"match_granularity must be one of {MATCH_GRANULARITIES}")
        for name in ("batch_size", "lr", "epochs", "n_way", "k_shot", "relation_hidden"):
            if not getattr(self, name) > 0:
                raise ConfigFileError(f"{name} must be positive")
        if self.steps_per_epoch < 0:
            raise ConfigFileError("steps_per_epoch must be non-negative")
        if self.lambda_balance < 0 or self.lr_floor < 0:
            raise ConfigFileError("lambda_balance and lr_floor must be non-negative")
        if self.n_way < 2:
            raise ConfigFileError("n_way must be at least 2")
        if self.episodic and self.batch_size != self.episode_size:
            raise ConfigFileError(
                f"batch_size {self.batch_size} must equal the episode size (n_way + 2) * k_shot = {self.episode_size}"
            )
        # surface nested validation errors at construction time
        self.encoder_config()
        self.aam_config()
        if self.data == "synthetic":
            self.synth_config()

    @property
    def episodic(self) -> bool:
        return self.loss_mode != "wce"

    @property
    def episode_size(self) -> int:
        return (self.n_way + 2) * self.k_shot

    def encoder_config(self) -> EncoderConfig:
        names = {f.name for f in fields(EncoderConfig)}
        return EncoderConfig(**{k: v for k, v in asdict(self).items() if k in names})

    def aam_config(self) -> AamConfig:
        return AamConfig(self.aam_scale, self.margin_bonafide, self.margin_spoof,
                         (self.weight_bonafide, self.weight_spoof), self.conventional_weighting)

    def synth_config(self) -> SynthConfig:
        return SynthConfig(
            n_train_attacks=self.synth_train_attacks,
            n_eval_attacks=self.synth_eval_attacks,
            samples_per_class=self.synth_per_class,
            dev_per_class=self.synth_dev_per_class,
            eval_per_class=self.synth_eval_per_class,
            segment_len=self.segment_len,
            utterance_len=self.synth_utterance_len,
            sample_rate=self.sample_rate,
            seed=self.synth_seed,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


# Small network and short segments for single-CPU runs. Rectified, pooled sinc
# output and pre-emphasis keep the few high-frequency rows informative; long
# synthetic utterances give a fresh random crop at every step.
PRESETS = {
    "full": {},
    "desk": dict(
        segment_len=1600,
        sinc_filters=12,
        sinc_kernel=65,
        sinc_abs=True,
        sinc_pool=4,
        pre_emphasis=0.97,
        num_blocks=2,
        filters_per_block=[8, 8],
        gru_hidden=32,
        embed_dim=32,
        lr=3e-3,
        epochs=30,
        steps_per_epoch=15,
        synth_utterance_len=16000,
    ),
}


def _coerce(name: str, raw: str, kind):
    try:
        if kind is bool:
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is list:
            return [int(v) for v in raw.replace(",", " ").split()]
        return raw
    except ValueError:
        raise ConfigFileError(f"{name}: cannot parse {raw!r} as {kind.__name__}") from None


# annotations are strings under postponed evaluation
_TYPES = {f.name: {"int": int, "float": float, "bool": bool, "str": str, "list": list}[f.type]
          for f in fields(TrainConfig)}


def parse_overrides(pairs) -> dict:
    """``[(key, raw_value, where), ...]`` to typed overrides; ``preset`` expands first."""
    values = {}
    for key, raw, where in pairs:
        if key == "preset":
            if raw not in PRESETS:
                raise ConfigFileError(f"{where}: unknown preset {raw!r} (choose from {sorted(PRESETS)})")
            values = {**PRESETS[raw], **values}
            continue
        if key not in _TYPES:
            raise ConfigFileError(f"{where}: unknown key {key!r}")
        values[key] = _coerce(f"{where}: {key}", raw, _TYPES[key])
    return values


def parse_config_text(text: str) -> TrainConfig:
    pairs = []
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigFileError(f"line {n}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        pairs.append((key, raw, f"line {n}"))
    return TrainConfig(**parse_overrides(pairs))


def load_config(path, **overrides) -> TrainConfig:
    cfg = parse_config_text(Path(path).read_text(encoding="utf-8"))
    return cfg.replace(**overrides) if overrides else cfg


def format_config(cfg: TrainConfig) -> str:
    lines = []
    for k, v in cfg.to_dict().items():
        if isinstance(v, list):
            v = ",".join(str(x) for x in v)
        lines.append(f"{k} = {v}\n")
    return "".join(lines)
