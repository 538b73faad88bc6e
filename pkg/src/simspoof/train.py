"""Training loop (wce / aam / aam+mse) and evaluation."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .autograd import NonFiniteError
from .config import TrainConfig, format_config
from .data import Corpus, crop_or_tile, generate_synthetic_corpus, load_corpus_dir
from .episodes import build_pairs, index_by_label, relation_score, sample_episode
from .losses import aam_loss, relation_mse_loss, total_loss, weighted_cross_entropy
from .metrics import ScoreSet, TdcfParams, breakdown_report, compute_eer, write_scores
from .model import SpoofModel, load_checkpoint, save_checkpoint
from .nn import Adam, cosine_lr

LOG_HEADER = "epoch,loss_aam,loss_mse,loss_total,dev_eer,lr"


class TrainingError(RuntimeError):
    pass


@dataclass
class EpochLog:
    epoch: int
    loss_aam: float  # classification loss: AAM, or WCE in wce mode
    loss_mse: float
    loss_total: float
    dev_eer: float
    lr: float

    def csv_line(self) -> str:
        return f"{self.epoch},{self.loss_aam:.6f},{self.loss_mse:.6f},{self.loss_total:.6f},{self.dev_eer:.6f},{self.lr:.6g}"


@dataclass
class TrainResult:
    model: SpoofModel
    history: list = field(default_factory=list)
    step_losses: list = field(default_factory=list)  # (loss_aam, loss_mse, loss_total) per step
    best_epoch: int = -1
    best_dev_eer: float = float("inf")
    checkpoint: Optional[Path] = None

    def loss_drop(self) -> float:
        """Relative decrease of the total loss from epoch 0 to the best epoch."""
        first = self.history[0].loss_total
        return (first - self.history[self.best_epoch].loss_total) / first


def load_data(cfg: TrainConfig) -> Corpus:
    if cfg.data == "synthetic":
        return generate_synthetic_corpus(cfg.synth_config())
    return load_corpus_dir(cfg.data)


def segments(corpus: Corpus, records, length: int, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    return np.stack([crop_or_tile(corpus.waveform(r), length, rng) for r in records])


def binary_labels(records) -> np.ndarray:
    return np.array([r.binary_label for r in records], dtype=np.int64)


def evaluate_model(model: SpoofModel, corpus: Corpus, partition: str = "eval") -> ScoreSet:
    records = corpus.partition(partition)
    if not records:
        raise TrainingError(f"partition {partition!r} is empty")
    scores = model.score(segments(corpus, records, model.cfg.segment_len))
    return ScoreSet([r.trial_id for r in records], [r.label for r in records], scores)


def _step_losses(model: SpoofModel, cfg: TrainConfig, waves: np.ndarray, labels: np.ndarray, episode=None):
    emb = model(waves)
    if cfg.loss_mode == "wce":
        l_cls = weighted_cross_entropy(model.wce_head(emb), labels, (cfg.weight_bonafide, cfg.weight_spoof))
        return l_cls, None, l_cls
    l_cls = aam_loss(emb, labels, model.aam_head, cfg.aam_config())
    if cfg.loss_mode == "aam":
        return l_cls, None, l_cls
    pairs, target = build_pairs(episode, emb, cfg.match_granularity)
    n_s, n_q = len(episode.support), len(episode.query)
    l_mse = relation_mse_loss(relation_score(pairs, model.relation, (n_s, n_q)), target, cfg.n_way, cfg.k_shot)
    return l_cls, l_mse, total_loss(l_cls, l_mse, cfg.lambda_balance)


def train(cfg: TrainConfig, corpus: Optional[Corpus] = None, out_dir=None,
          log: Optional[Callable[[str], None]] = None, steps_per_epoch: Optional[int] = None) -> TrainResult:
    """Train one model; the best dev-EER epoch is checkpointed under ``out_dir`` when given.

    Random streams (initialization, batch/episode sampling, cropping) are all
    derived from ``cfg.seed``.
    """
    corpus = corpus if corpus is not None else load_data(cfg)
    init_ss, sample_ss, crop_ss = np.random.SeedSequence(cfg.seed).spawn(3)
    sample_rng, crop_rng = np.random.default_rng(sample_ss), np.random.default_rng(crop_ss)
    model = SpoofModel(cfg, np.random.default_rng(init_ss))
    optimizer = Adam(model.trainable_parameters(), lr=cfg.lr)

    train_recs = corpus.partition("train")
    if not train_recs:
        raise TrainingError("training partition is empty")
    dev_recs = corpus.partition("dev")
    if not dev_recs:
        warnings.warn("no dev partition: the last epoch is kept", stacklevel=2)
    dev_waves = segments(corpus, dev_recs, cfg.segment_len) if dev_recs else None
    dev_bona = np.array([r.is_bonafide for r in dev_recs], dtype=bool)

    index = None
    if cfg.episodic:
        index = index_by_label(train_recs, [r.label for r in train_recs])
        # raises early with the offending type when data are insufficient
        sample_episode(index, cfg.n_way, cfg.k_shot, np.random.default_rng(0))
    n_steps = steps_per_epoch or cfg.steps_per_epoch or math.ceil(len(train_recs) / cfg.batch_size)

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.txt").write_text(format_config(cfg), encoding="utf-8")
        log_path = out / "train_log.csv"
        log_path.write_text(LOG_HEADER + "\n", encoding="utf-8")
    if log:
        log(LOG_HEADER)

    result = TrainResult(model)
    best_state = None
    for epoch in range(cfg.epochs):
        lr = cosine_lr(epoch, cfg.epochs, cfg.lr, cfg.lr_floor)
        optimizer.lr = lr
        model.train()
        order = sample_rng.permutation(len(train_recs)) if not cfg.episodic else None
        sums = np.zeros(3)
        for step in range(n_steps):
            episode = None
            if cfg.episodic:
                episode = sample_episode(index, cfg.n_way, cfg.k_shot, sample_rng)
                batch = episode.members
                labels = episode.binary_labels()
            else:
                start = (step * cfg.batch_size) % len(train_recs)
                batch = [train_recs[i] for i in order[start:start + cfg.batch_size]]
                labels = binary_labels(batch)
            waves = segments(corpus, batch, cfg.segment_len, crop_rng)
            try:
                l_cls, l_mse, l_tot = _step_losses(model, cfg, waves, labels, episode)
                optimizer.zero_grad()
                l_tot.backward()
            except NonFiniteError as exc:
                raise TrainingError(
                    f"non-finite value at epoch {epoch} step {step} (lr {lr:.3g}); "
                    f"last step losses {result.step_losses[-1] if result.step_losses else 'n/a'}: {exc}"
                ) from exc
            optimizer.step()
            losses = (l_cls.item(), l_mse.item() if l_mse is not None else 0.0, l_tot.item())
            result.step_losses.append(losses)
            sums += losses

        dev_eer = float("nan")
        if dev_waves is not None:
            scores = model.score(dev_waves)
            dev_eer = compute_eer((scores[dev_bona], scores[~dev_bona]))[0]
        mean = sums / n_steps
        entry = EpochLog(epoch, mean[0], mean[1], mean[2], dev_eer, lr)
        result.history.append(entry)
        if log:
            log(entry.csv_line())
        if out is not None:
            with open(log_path, "a", encoding="utf-8") as fh:
                fh.write(entry.csv_line() + "\n")

        improved = dev_eer < result.best_dev_eer if dev_waves is not None else True
        if improved:
            result.best_epoch, result.best_dev_eer = epoch, dev_eer
            best_state = {k: v.copy() for k, v in model.state_dict().items()}
            if out is not None:
                result.checkpoint = out / "checkpoint.npz"
                save_checkpoint(result.checkpoint, model, {"epoch": epoch, "dev_eer": dev_eer})

    model.load_state_dict(best_state)
    return result


def train_seeds(cfg: TrainConfig, seeds: Sequence[int], corpus: Optional[Corpus] = None, out_dir=None,
                log: Optional[Callable[[str], None]] = None) -> tuple:
    """One run per seed; returns ``(best_result, all_results)`` ranked by dev EER."""
    corpus = corpus if corpus is not None else load_data(cfg)
    results = []
    for seed in seeds:
        if log:
            log(f"# seed {seed}")
        run_dir = Path(out_dir) / f"seed_{seed}" if out_dir is not None else None
        results.append(train(cfg.replace(seed=seed), corpus, run_dir, log))
    best = min(results, key=lambda r: r.best_dev_eer)
    return best, results


def resolve_data(spec: str, cfg: TrainConfig) -> Corpus:
    if spec == "synthetic":
        if cfg.data != "synthetic":
            warnings.warn("checkpoint was trained on a directory corpus; generating synthetic data anyway",
                          stacklevel=2)
        return generate_synthetic_corpus(cfg.synth_config())
    return load_corpus_dir(spec)


def evaluate(checkpoint, data: str = "synthetic", partition: str = "eval", out_dir=None,
             params: TdcfParams = TdcfParams(), system: Optional[str] = None) -> tuple:
    """Score a partition with a saved model; writes ``scores.txt``, ``report.txt`` and
    ``report.csv`` under ``out_dir`` when given. Returns ``(ScoreSet, BreakdownReport)``."""
    model, _ = load_checkpoint(checkpoint)
    corpus = resolve_data(data, model.cfg)
    scores = evaluate_model(model, corpus, partition)
    report = breakdown_report(scores, params, system or model.cfg.loss_mode)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_scores(out / "scores.txt", scores)
        (out / "report.txt").write_text(report.to_text(), encoding="utf-8")
        (out / "report.csv").write_text(report.to_csv(), encoding="utf-8")
    return scores, report
