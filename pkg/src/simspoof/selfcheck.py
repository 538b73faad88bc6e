"""Built-in oracle suite: gradient checks, closed forms and combinatorial counts.

Every check reports its measured error next to the tolerance it must meet, so a
failing build shows how far off it is rather than just that it failed.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import autograd as ag
from .attention import (
    CbamConfig,
    CbamParams,
    SeConfig,
    SeParams,
    SimAmConfig,
    cbam_refine,
    se_refine,
    simam_energy,
    simam_refine,
)
from .autograd import Tensor, grad_check
from .encoder import EncoderConfig, RawNetEncoder
from .episodes import RelationNet, build_pairs, index_by_label, relation_score, sample_episode
from .losses import AamConfig, aam_loss, log_softmax, relation_mse_loss, total_loss
from .metrics import compute_eer

GRAD_TOL = 1e-4


@dataclass(frozen=True)
class CheckResult:
    name: str
    tolerance: float
    error: float
    seconds: float = 0.0
    detail: str = ""

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.error)) and self.error <= self.tolerance

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        text = f"{status}  {self.name:<28} error {self.error:.3e}  tol {self.tolerance:.1e}  {self.seconds:6.2f}s"
        return f"{text}  {self.detail}" if self.detail else text


# -- gradient checks ------------------------------------------------------------

def _grad_simam(rng):
    x = rng.normal(size=(2, 3, 4))
    w = Tensor(rng.normal(size=x.shape))
    return max(grad_check(lambda t: ag.sum(simam_refine(t, SimAmConfig(1e-4, stats)) * w), x)
               for stats in ("channel", "leave_one_out"))


def _grad_se(rng):
    cfg = SeConfig(2)
    p = SeParams(4, cfg, rng)
    x = rng.normal(size=(2, 3, 4, 5))
    w = Tensor(rng.normal(size=x.shape))
    return grad_check(lambda t: ag.sum(se_refine(t, p, cfg) * w), x)


def _grad_cbam(rng):
    cfg = CbamConfig(2, 3)
    p = CbamParams(4, cfg, rng)
    x = rng.normal(size=(2, 4, 3, 5))
    w = Tensor(rng.normal(size=x.shape))
    return grad_check(lambda t: ag.sum(cbam_refine(t, p, cfg) * w), x)


def _grad_encoder(rng):
    cfg = EncoderConfig(segment_len=1600, sinc_filters=8, sinc_kernel=33, num_blocks=2, filters_per_block=[4, 4],
                        gru_hidden=6, embed_dim=5, attention_kind="simam")
    enc = RawNetEncoder(cfg, rng)
    wave = rng.normal(size=1600)
    # a random projection keeps the scalar off the flat directions batch norm creates
    proj = Tensor(rng.normal(size=cfg.embed_dim))
    return grad_check(lambda t: ag.sum(enc(t) * proj), wave, coords=40, rng=rng)


def _batch(rng, B=6, d=5):
    return rng.normal(size=(B, d)), rng.integers(0, 2, size=B), rng.normal(size=(d, 2))


def _grad_aam(rng):
    emb, labels, anchors = _batch(rng)
    # a small scale keeps every sample away from the saturated, near-zero-gradient regime
    cfg = AamConfig(scale=4.0)
    return max(grad_check(lambda t: aam_loss(t, labels, anchors, cfg), emb),
               grad_check(lambda t: aam_loss(Tensor(emb), labels, t, cfg), anchors))


def _grad_relation_mse(rng):
    mask = rng.integers(0, 2, size=(6, 4))
    return grad_check(lambda t: relation_mse_loss(t, mask), rng.uniform(size=(6, 4)))


def _grad_composite(rng):
    emb, labels, anchors = _batch(rng, B=4, d=3)
    W = Tensor(rng.normal(size=(6, 1)))
    mask = rng.integers(0, 2, size=(2, 2))

    def f(t):
        pairs = ag.concat([ag.getitem(t, [0, 0, 1, 1]), ag.getitem(t, [2, 3, 2, 3])], axis=1)
        scores = ag.reshape(ag.sigmoid(ag.matmul(pairs, W)), (2, 2))
        return total_loss(aam_loss(t, labels, anchors), relation_mse_loss(scores, mask), 0.7)

    return grad_check(f, emb)


def _grad_relation_net(rng):
    items = [(lab, i) for lab in ("bonafide", "A01", "A02", "A03") for i in range(6)]
    index = index_by_label(items, [lab for lab, _ in items])
    ep = sample_episode(index, 3, 2, rng)
    net = RelationNet(4, rng, hidden=6)

    def f(t):
        pairs, _ = build_pairs(ep, t)
        return ag.sum(relation_score(pairs, net, (len(ep.support), len(ep.query))))

    return grad_check(f, rng.normal(size=(len(ep.members), 4)))


# -- closed forms and counts ------------------------------------------------------

def energy_minima_by_descent(channels, lams, steps: int = 10_000) -> list:
    """For every neuron of every channel, minimize the neuron energy over the linear
    transform ``(w, b)`` numerically, with the target mapped to 1 and the channel's
    other neurons to -1. All problems run together, padded to a common width."""
    flat = [np.asarray(c, dtype=np.float64).reshape(-1) for c in channels]
    width = max(v.size for v in flat) - 1
    rows, masks, targets, lam = [], [], [], []
    for v, l in zip(flat, lams):
        for i in range(v.size):
            rest = np.delete(v, i)
            rows.append(np.pad(rest, (0, width - rest.size)))
            masks.append(np.arange(width) < rest.size)
            targets.append(v[i])
            lam.append(l)
    others, mask, t, lam = np.array(rows), np.array(masks, float), np.array(targets), np.array(lam)
    cnt = mask.sum(axis=1)

    def avg(a):
        return (a * mask).sum(axis=1) / cnt

    m1, m2 = avg(others), avg(others**2)
    # the energy is quadratic in (w, b); heavy-ball momentum tuned to its exact curvature
    # bounds copes with the ill-conditioned few-neuron, small-lambda cases
    h11, h12, h22 = 2 * (m2 + t * t + lam), 2 * (m1 + t), 4.0
    tr, det = h11 + h22, h11 * h22 - h12**2
    big = tr / 2 + np.sqrt(tr**2 / 4 - det)
    small = det / big
    step = 4.0 / (np.sqrt(big) + np.sqrt(small)) ** 2
    beta = ((np.sqrt(big) - np.sqrt(small)) / (np.sqrt(big) + np.sqrt(small))) ** 2
    w, b = np.zeros_like(t), np.zeros_like(t)
    vw, vb = np.zeros_like(t), np.zeros_like(t)
    for _ in range(steps):
        r = w[:, None] * others + b[:, None] + 1.0
        q = w * t + b - 1.0
        vw = beta * vw - step * (2 * avg(r * others) + 2 * q * t + 2 * lam * w)
        vb = beta * vb - step * (2 * avg(r) + 2 * q)
        w, b = w + vw, b + vb
    r = w[:, None] * others + b[:, None] + 1.0
    energy = avg(r**2) + (w * t + b - 1.0) ** 2 + lam * w * w
    return np.split(energy, np.cumsum([v.size for v in flat])[:-1])


def _simam_closed_form(rng, channels=40):
    maps, lams = [], []
    for _ in range(channels):
        F = int(rng.integers(1, 5))
        T = int(rng.integers(-(-2 // F), 5))  # at least two neurons per channel
        maps.append(rng.normal(size=(1, F, T)))
        lams.append(float(rng.choice([1e-4, 1e-2, 1.0])))
    brute = energy_minima_by_descent(maps, lams)
    return max(float(np.max(np.abs(simam_energy(Tensor(x), SimAmConfig(lam, "leave_one_out")).data.reshape(-1) - e)))
               for x, lam, e in zip(maps, lams, brute))


def _simam_uniform(rng):
    x = np.full((2, 3, 4), rng.normal())
    e = simam_energy(Tensor(x), SimAmConfig(1e-4)).data
    gain = simam_refine(Tensor(x), SimAmConfig(1e-4)).data / x
    return max(float(np.max(np.abs(e - 2.0))), float(np.max(np.abs(gain - 1 / (1 + math.exp(-0.5))))))


def _aam_degenerate(rng, batches=20):
    cfg = AamConfig(margin_bonafide=0.0, margin_spoof=0.0, class_weights=(1.0, 1.0))
    worst = 0.0
    for _ in range(batches):
        emb, labels, anchors = _batch(rng, B=int(rng.integers(1, 9)), d=int(rng.integers(2, 7)))
        e = emb / np.linalg.norm(emb, axis=1, keepdims=True)
        a = anchors / np.linalg.norm(anchors, axis=0, keepdims=True)
        logits = cfg.scale * np.clip(e @ a, -1 + 1e-7, 1 - 1e-7)
        ce = -np.mean(log_softmax(Tensor(logits)).data[np.arange(len(labels)), labels])
        worst = max(worst, abs(aam_loss(emb, labels, anchors, cfg).item() - ce))
    return worst


def _episode_counts(rng, episodes=50):
    violations = 0
    for n, k in itertools.product(range(2, 7), range(1, 4)):
        labels = ["bonafide"] * (2 * k) + [f"A{t:02d}" for t in range(1, n + 1) for _ in range(k)]
        index = index_by_label(list(range(len(labels))), labels)
        for _ in range(episodes):
            ep = sample_episode(index, n, k, rng)
            pairs, _ = build_pairs(ep, Tensor(np.zeros((len(ep.members), 1))))
            support = {item for item, _ in ep.support}
            violations += (len(ep.support) != n * k) + (len(ep.query) != 2 * k)
            violations += pairs.shape[0] != 2 * n * k * k
            violations += any(lab == ep.held_out_type for _, lab in ep.support)
            violations += bool(support & {item for item, _ in ep.query})
    return float(violations)


def eer_by_threshold_sweep(bona, spoof) -> float:
    """EER from a direct walk over every candidate threshold."""
    taus = sorted(set(bona) | set(spoof)) + [math.inf]
    prev = None
    for tau in taus:
        frr = sum(b < tau for b in bona) / len(bona)
        far = sum(s >= tau for s in spoof) / len(spoof)
        if frr >= far:
            p_frr, p_far = prev
            alpha = -(p_frr - p_far) / ((frr - far) - (p_frr - p_far))
            return p_frr + alpha * (frr - p_frr)
        prev = (frr, far)
    raise AssertionError("threshold sweep never crossed")


def _eer_sweep(rng, sets=100):
    worst = 0.0
    for _ in range(sets):
        nb, ns = rng.integers(1, 40, size=2)
        # coarse rounding forces ties
        bona, spoof = np.round(rng.normal(0.5, 1, nb), 1), np.round(rng.normal(-0.5, 1, ns), 1)
        worst = max(worst, abs(compute_eer((bona, spoof))[0] - eer_by_threshold_sweep(list(bona), list(spoof))))
    return worst


CHECKS: list = [
    ("grad: simam", _grad_simam, GRAD_TOL),
    ("grad: squeeze-excite", _grad_se, GRAD_TOL),
    ("grad: cbam", _grad_cbam, GRAD_TOL),
    ("grad: tiny encoder", _grad_encoder, GRAD_TOL),
    ("grad: aam loss", _grad_aam, GRAD_TOL),
    ("grad: relation mse", _grad_relation_mse, GRAD_TOL),
    ("grad: composite loss", _grad_composite, GRAD_TOL),
    ("grad: relation net", _grad_relation_net, GRAD_TOL),
    ("simam closed form vs descent", _simam_closed_form, 1e-6),
    ("simam uniform channel", _simam_uniform, 1e-15),
    ("aam zero-margin equals ce", _aam_degenerate, 1e-10),
    ("episode counts", _episode_counts, 0.0),
    ("eer vs threshold sweep", _eer_sweep, 1e-12),
]


def run_selfcheck(seed: int = 0, log: Optional[Callable[[str], None]] = None, checks=None) -> list:
    """Run every check; exceptions become failed entries rather than propagating."""
    results = []
    for k, (name, fn, tol) in enumerate(checks if checks is not None else CHECKS):
        rng = np.random.default_rng([seed, k])
        start = time.perf_counter()
        detail = ""
        try:
            error = float(fn(rng))
        except Exception as exc:  # noqa: BLE001 - any crash is a failed check
            error, detail = math.inf, f"{type(exc).__name__}: {exc}"
        res = CheckResult(name, tol, error, time.perf_counter() - start, detail)
        results.append(res)
        if log:
            log(res.line())
    return results


def format_report(results) -> str:
    passed = sum(r.passed for r in results)
    lines = [r.line() for r in results]
    lines.append(f"{passed}/{len(results)} checks passed")
    return "\n".join(lines) + "\n"
