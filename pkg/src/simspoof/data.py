"""Protocol files, WAV I/O, fixed-length segmentation and a synthetic corpus.

Protocol lines follow the five-field layout
``<speaker> <trial_id> - <attack_or_dash> <bonafide|spoof>``.
"""

from __future__ import annotations

import math
import warnings
import wave
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

BONAFIDE = "bonafide"
PARTITIONS = ("train", "dev", "eval")
SAMPLE_RATE = 16000


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class TrialRecord:
    trial_id: str
    label: str  # "bonafide" or an attack id
    partition: str = "train"
    source: str = ""  # audio path, or "synthetic:<seed>"
    speaker: str = "-"

    @property
    def is_bonafide(self) -> bool:
        return self.label == BONAFIDE

    @property
    def binary_label(self) -> int:
        return 0 if self.is_bonafide else 1


# -- protocol files -------------------------------------------------------------

def parse_protocol_lines(lines, partition: str = "train", audio_dir=None) -> list:
    records, seen = [], set()
    for n, line in enumerate(lines, 1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 5:
            raise DataError(f"line {n}: expected 5 fields, got {len(parts)}")
        speaker, trial_id, _, attack, key = parts
        if key == BONAFIDE:
            if attack != "-":
                raise DataError(f"line {n}: bona fide trial {trial_id} carries attack {attack}")
            label = BONAFIDE
        elif key == "spoof":
            if attack == "-":
                raise DataError(f"line {n}: spoof trial {trial_id} has no attack id")
            label = attack
        else:
            raise DataError(f"line {n}: key must be 'bonafide' or 'spoof', got {key!r}")
        if trial_id in seen:
            raise DataError(f"line {n}: duplicate trial id {trial_id}")
        seen.add(trial_id)
        source = str(Path(audio_dir) / f"{trial_id}.wav") if audio_dir is not None else ""
        records.append(TrialRecord(trial_id, label, partition, source, speaker))
    return records


def parse_protocol(path, partition: str = "train", audio_dir=None) -> list:
    text = Path(path).read_text(encoding="utf-8")
    records = parse_protocol_lines(text.splitlines(), partition, audio_dir)
    if not records:
        warnings.warn(f"protocol {path} has no trials", stacklevel=2)
    return records


def serialize_protocol(records: Sequence[TrialRecord]) -> str:
    lines = []
    for r in records:
        attack, key = ("-", BONAFIDE) if r.is_bonafide else (r.label, "spoof")
        lines.append(f"{r.speaker} {r.trial_id} - {attack} {key}\n")
    return "".join(lines)


# -- audio ------------------------------------------------------------------------

def load_waveform(path, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Mono 16-bit PCM WAV as float64 samples in [-1, 1)."""
    try:
        with wave.open(str(path), "rb") as w:
            channels, width, rate, frames = w.getnchannels(), w.getsampwidth(), w.getframerate(), w.getnframes()
            raw = w.readframes(frames)
    except wave.Error as exc:
        raise DataError(f"{path}: not a PCM WAV file ({exc})") from None
    if channels != 1:
        raise DataError(f"{path}: expected mono audio, got {channels} channels")
    if width != 2:
        raise DataError(f"{path}: expected 16-bit samples, got {8 * width}-bit")
    if rate != sample_rate:
        raise DataError(f"{path}: expected {sample_rate} Hz, got {rate} Hz")
    return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0


def write_pcm(path, pcm: np.ndarray, sample_rate: int = SAMPLE_RATE, channels: int = 1) -> None:
    pcm = np.asarray(pcm)
    if pcm.dtype != np.int16:
        raise DataError("PCM samples must be int16")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(channels)
        w.setsampwidth(2)
        w.setframerate(sample_rate)
        w.writeframes(pcm.astype("<i2").tobytes())


def write_waveform(path, samples, sample_rate: int = SAMPLE_RATE) -> None:
    """Quantize float samples to 16-bit PCM (clipping to the representable range)."""
    pcm = np.clip(np.round(np.asarray(samples, dtype=np.float64) * 32768.0), -32768, 32767).astype(np.int16)
    write_pcm(path, pcm, sample_rate)


def crop_or_tile(samples, target_len: int, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Fixed-length segment: random crop when ``rng`` is given, else the leading samples.

    Short inputs are repeated end to end and truncated.
    """
    samples = np.asarray(samples)
    if samples.size == 0:
        raise DataError("cannot segment an empty waveform")
    if target_len <= 0:
        raise DataError("target length must be positive")
    n = samples.size
    if n >= target_len:
        start = int(rng.integers(0, n - target_len + 1)) if rng is not None else 0
        return samples[start:start + target_len].copy()
    return np.tile(samples, math.ceil(target_len / n))[:target_len]


# -- synthetic corpus -------------------------------------------------------------

FAMILIES = ("tone", "peak", "clip", "lowpass", "noise")


@dataclass
class SynthConfig:
    n_train_attacks: int = 6
    n_eval_attacks: int = 2
    samples_per_class: int = 20
    dev_per_class: int = 10
    eval_per_class: int = 10
    segment_len: int = 1600
    # utterances longer than a segment give random training crops; 0 means segment_len
    utterance_len: int = 0
    sample_rate: int = SAMPLE_RATE
    bonafide_band_hz: float = 3800.0
    noise_level: float = 0.002
    # per-type artifact strength u is drawn once inside these ranges
    train_param_range: tuple = (0.0, 0.5)
    eval_param_range: tuple = (0.5, 1.0)
    seed: int = 0

    def __post_init__(self):
        self.train_param_range = tuple(float(v) for v in self.train_param_range)
        self.eval_param_range = tuple(float(v) for v in self.eval_param_range)
        for name in ("n_train_attacks", "samples_per_class", "segment_len", "sample_rate"):
            if getattr(self, name) < 1:
                raise DataError(f"{name} must be >= 1")
        for name in ("n_eval_attacks", "dev_per_class", "eval_per_class"):
            if getattr(self, name) < 0:
                raise DataError(f"{name} must be >= 0")
        for lo, hi in (self.train_param_range, self.eval_param_range):
            if not 0.0 <= lo <= hi <= 1.0:
                raise DataError("parameter ranges must satisfy 0 <= lo <= hi <= 1")
        (a, b), (c, d) = self.train_param_range, self.eval_param_range
        if self.n_eval_attacks and a < d and c < b:
            raise DataError("train and eval artifact parameter ranges overlap")
        if self.utterance_len == 0:
            self.utterance_len = self.segment_len
        if self.utterance_len < self.segment_len:
            raise DataError("utterance_len must be at least segment_len")
        if not 0 < self.bonafide_band_hz < self.sample_rate / 2:
            raise DataError("bonafide_band_hz must lie below the Nyquist frequency")

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def train_attacks(self) -> list:
        return [f"A{k:02d}" for k in range(1, self.n_train_attacks + 1)]

    @property
    def eval_attacks(self) -> list:
        first = self.n_train_attacks + 1
        return [f"A{k:02d}" for k in range(first, first + self.n_eval_attacks)]


@dataclass(frozen=True)
class AttackSpec:
    attack: str
    family: str
    strength: float  # u in [0, 1]

    def describe(self) -> str:
        return f"{self.attack}: {self.family} u={self.strength:.3f}"


@dataclass
class Corpus:
    records: list
    waves: dict = field(default_factory=dict)  # trial_id -> samples
    attacks: list = field(default_factory=list)  # AttackSpec per attack type, empty for loaded corpora

    def partition(self, name: str) -> list:
        if name not in PARTITIONS:
            raise DataError(f"unknown partition {name!r}")
        return [r for r in self.records if r.partition == name]

    def waveform(self, record: TrialRecord) -> np.ndarray:
        if record.trial_id not in self.waves:
            self.waves[record.trial_id] = load_waveform(record.source)
        return self.waves[record.trial_id]

    def attack_ids(self, partition: Optional[str] = None) -> list:
        recs = self.records if partition is None else self.partition(partition)
        return sorted({r.label for r in recs if not r.is_bonafide})


def _bandpass_noise(rng, n, sr, center, width):
    spec = np.fft.rfft(rng.normal(size=n))
    freqs = np.fft.rfftfreq(n, 1.0 / sr)
    out = np.fft.irfft(spec * np.exp(-0.5 * ((freqs - center) / width) ** 2), n)
    return out / (np.sqrt(np.mean(out**2)) + 1e-12)


def _lowpass(x, sr, cutoff, roll=100.0):
    freqs = np.fft.rfftfreq(x.size, 1.0 / sr)
    gain = 1.0 / (1.0 + np.exp((freqs - cutoff) / roll))
    return np.fft.irfft(np.fft.rfft(x) * gain, x.size)


def bonafide_utterance(rng: np.random.Generator, cfg: SynthConfig) -> np.ndarray:
    """Harmonic multi-sine below ``bonafide_band_hz`` with a random gliding fundamental, plus faint noise."""
    n, sr = cfg.utterance_len, cfg.sample_rate
    t = np.arange(n) / sr
    f0_start, f0_end = rng.uniform(90.0, 260.0, size=2)
    f0 = np.linspace(f0_start, f0_end, n)
    cycles = np.cumsum(f0) / sr
    harmonics = np.arange(1, int(cfg.bonafide_band_hz // max(f0_start, f0_end)) + 1)
    amps = rng.uniform(0.5, 1.0, harmonics.size) / harmonics
    phases = rng.uniform(0, 2 * np.pi, harmonics.size)
    x = (amps[:, None] * np.sin(2 * np.pi * harmonics[:, None] * cycles + phases[:, None])).sum(axis=0)
    envelope = 1.0 + 0.3 * np.sin(2 * np.pi * rng.uniform(2.0, 6.0) * t + rng.uniform(0, 2 * np.pi))
    x = 0.5 * x * envelope / np.max(np.abs(x * envelope))
    return x + cfg.noise_level * rng.normal(size=n)


def apply_artifact(x: np.ndarray, spec: AttackSpec, rng: np.random.Generator, sr: int) -> np.ndarray:
    u, n = spec.strength, x.size
    t = np.arange(n) / sr
    if spec.family == "tone":
        return x + 0.04 * np.sin(2 * np.pi * (4300.0 + 3200.0 * u) * t + rng.uniform(0, 2 * np.pi))
    if spec.family == "peak":
        return x + 0.03 * _bandpass_noise(rng, n, sr, 4300.0 + 3200.0 * u, 150.0)
    if spec.family == "clip":
        level = (0.3 - 0.2 * u) * np.max(np.abs(x))
        return np.clip(x, -level, level)
    if spec.family == "lowpass":
        return _lowpass(x, sr, 2500.0 - 1500.0 * u)
    if spec.family == "noise":
        return x + (0.01 + 0.03 * u) * rng.normal(size=n)
    raise DataError(f"unknown artifact family {spec.family!r}")


def attack_specs(cfg: SynthConfig) -> list:
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0]))
    specs = []
    for k, attack in enumerate(cfg.train_attacks + cfg.eval_attacks):
        lo, hi = cfg.train_param_range if k < cfg.n_train_attacks else cfg.eval_param_range
        specs.append(AttackSpec(attack, FAMILIES[k % len(FAMILIES)], float(rng.uniform(lo, hi))))
    return specs


def generate_synthetic_corpus(cfg: SynthConfig) -> Corpus:
    """Deterministic train/dev/eval corpus.

    Train and dev hold bona fide plus the train attack types; eval adds the
    unseen types, whose artifact strengths come from the disjoint eval range.
    """
    specs = attack_specs(cfg)
    by_id = {s.attack: s for s in specs}
    plan = [
        ("train", cfg.samples_per_class, cfg.train_attacks),
        ("dev", cfg.dev_per_class, cfg.train_attacks),
        ("eval", cfg.eval_per_class, cfg.train_attacks + cfg.eval_attacks),
    ]
    records, waves = [], {}
    for p_index, (partition, count, attacks) in enumerate(plan, 1):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, p_index]))
        prefix = f"SYN_{partition[0].upper()}"
        serial = 0
        for label in [BONAFIDE] + attacks:
            for _ in range(count):
                trial_id = f"{prefix}_{serial:05d}"
                serial += 1
                x = bonafide_utterance(rng, cfg)
                if label != BONAFIDE:
                    x = apply_artifact(x, by_id[label], rng, cfg.sample_rate)
                waves[trial_id] = x
                speaker = f"SYN_{int(rng.integers(0, 20)):04d}"
                records.append(TrialRecord(trial_id, label, partition, f"synthetic:{cfg.seed}", speaker))
    return Corpus(records, waves, specs)


def export_corpus(corpus: Corpus, out_dir) -> dict:
    """Write ``wav/<trial_id>.wav`` and one ``<partition>.txt`` protocol per partition."""
    out = Path(out_dir)
    (out / "wav").mkdir(parents=True, exist_ok=True)
    paths = {}
    for partition in PARTITIONS:
        records = corpus.partition(partition)
        if not records:
            continue
        for r in records:
            write_waveform(out / "wav" / f"{r.trial_id}.wav", corpus.waveform(r))
        paths[partition] = out / f"{partition}.txt"
        paths[partition].write_text(serialize_protocol(records), encoding="utf-8")
    if corpus.attacks:
        (out / "attacks.txt").write_text("".join(s.describe() + "\n" for s in corpus.attacks), encoding="utf-8")
    return paths


def load_corpus_dir(root) -> Corpus:
    """Corpus from ``<partition>.txt`` protocols with audio under ``wav/`` (loaded lazily)."""
    root = Path(root)
    records = []
    for partition in PARTITIONS:
        path = root / f"{partition}.txt"
        if path.exists():
            records += parse_protocol(path, partition, root / "wav")
    if not records:
        raise DataError(f"no protocol files found under {root}")
    return Corpus(records)
