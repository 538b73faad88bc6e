"""Detection metrics: EER, minimum normalized tandem DCF, per-attack breakdown.

Scores are oriented so that higher means more bona fide. A trial is accepted
as bona fide at threshold ``tau`` iff ``score >= tau``.
"""

from __future__ import annotations

import csv
import io
import math
import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

BONAFIDE = "bonafide"


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class ScoreSet:
    trial_ids: tuple
    attacks: tuple  # "bonafide" or an attack id per trial
    scores: np.ndarray

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "trial_ids", tuple(self.trial_ids))
        object.__setattr__(self, "attacks", tuple(self.attacks))
        if not len(self.trial_ids) == len(self.attacks) == scores.size:
            raise MetricError("trial_ids, attacks and scores differ in length")
        if not np.all(np.isfinite(scores)):
            raise MetricError("scores must be finite")

    @classmethod
    def from_arrays(cls, bona, spoof, attack: str = "spoof") -> "ScoreSet":
        bona, spoof = np.asarray(bona, float).reshape(-1), np.asarray(spoof, float).reshape(-1)
        ids = [f"b{i}" for i in range(bona.size)] + [f"s{i}" for i in range(spoof.size)]
        return cls(ids, [BONAFIDE] * bona.size + [attack] * spoof.size, np.concatenate([bona, spoof]))

    def __len__(self) -> int:
        return self.scores.size

    @property
    def is_bonafide(self) -> np.ndarray:
        return np.array([a == BONAFIDE for a in self.attacks], dtype=bool)

    def bonafide_scores(self) -> np.ndarray:
        return self.scores[self.is_bonafide]

    def spoof_scores(self, attack: Optional[str] = None) -> np.ndarray:
        if attack is None:
            return self.scores[~self.is_bonafide]
        return self.scores[np.array([a == attack for a in self.attacks], dtype=bool)]

    def attack_types(self) -> list:
        return sorted({a for a in self.attacks if a != BONAFIDE}, key=natural_key)


def natural_key(label: str):
    return [int(part) if part.isdigit() else part for part in re.split(r"(\d+)", str(label))]


def _split(scores) -> tuple:
    if isinstance(scores, ScoreSet):
        bona, spoof = scores.bonafide_scores(), scores.spoof_scores()
    else:
        bona, spoof = (np.asarray(s, dtype=np.float64).reshape(-1) for s in scores)
    if bona.size == 0 or spoof.size == 0:
        raise MetricError("need at least one bona fide and one spoof trial")
    return bona, spoof


def error_rates(bona: np.ndarray, spoof: np.ndarray):
    """Thresholds (all distinct scores, then +inf) with FRR and FAR at each."""
    taus = np.append(np.unique(np.concatenate([bona, spoof])), np.inf)
    rejected = np.searchsorted(np.sort(bona), taus, side="left")
    accepted = spoof.size - np.searchsorted(np.sort(spoof), taus, side="left")
    return taus, rejected / bona.size, accepted / spoof.size


def compute_eer(scores) -> tuple:
    """Equal error rate and its threshold.

    ``scores`` is a ScoreSet or a ``(bona, spoof)`` pair. The crossing is
    linearly interpolated between the last sweep point with FRR < FAR and the
    first with FRR >= FAR.
    """
    bona, spoof = _split(scores)
    taus, frr, far = error_rates(bona, spoof)
    diff = frr - far
    i = int(np.argmax(diff >= 0))  # diff[-1] = 1, diff[0] = -1
    d0, d1 = diff[i - 1], diff[i]
    alpha = -d0 / (d1 - d0)
    eer = frr[i - 1] + alpha * (frr[i] - frr[i - 1])
    thr = taus[i - 1] if math.isinf(taus[i]) else taus[i - 1] + alpha * (taus[i] - taus[i - 1])
    return float(eer), float(thr)


@dataclass(frozen=True)
class TdcfParams:
    """Priors, costs and the fixed ASV operating point of the tandem cost."""

    p_spoof: float = 0.05
    p_tar: float = 0.95 * 0.99
    p_non: float = 0.95 * 0.01
    c_miss_cm: float = 1.0
    c_fa_cm: float = 10.0
    c_miss_asv: float = 1.0
    c_fa_asv: float = 10.0
    # illustrative ASV error rates; real values come from an ASV system
    p_miss_asv: float = 0.01
    p_fa_asv: float = 0.01
    p_miss_spoof_asv: float = 0.1

    def __post_init__(self):
        for name in ("p_spoof", "p_tar", "p_non", "p_miss_asv", "p_fa_asv", "p_miss_spoof_asv"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise MetricError(f"{name} must lie in [0, 1]")
        for name in ("c_miss_cm", "c_fa_cm", "c_miss_asv", "c_fa_asv"):
            if not getattr(self, name) > 0:
                raise MetricError(f"{name} must be positive")

    def cost_weights(self) -> tuple:
        """(C1, C2): cost per unit CM miss rate and per unit CM false-accept rate."""
        c1 = self.p_tar * (self.c_miss_cm - self.c_miss_asv * self.p_miss_asv) - self.p_non * self.c_fa_asv * self.p_fa_asv
        c2 = self.c_fa_cm * self.p_spoof * (1.0 - self.p_miss_spoof_asv)
        return c1, c2


def compute_min_tdcf(scores, params: TdcfParams = TdcfParams()) -> tuple:
    """Minimum over thresholds of the tandem cost normalized by ``min(C1, C2)``.

    The sweep includes accept-all and reject-all, so the result never exceeds 1.
    """
    bona, spoof = _split(scores)
    c1, c2 = params.cost_weights()
    if min(c1, c2) <= 0:
        raise MetricError(f"degenerate normalization: C1={c1}, C2={c2}")
    taus, p_miss, p_fa = error_rates(bona, spoof)
    cost = (c1 * p_miss + c2 * p_fa) / min(c1, c2)
    i = int(np.argmin(cost))
    return float(cost[i]), float(taus[i])


@dataclass
class BreakdownReport:
    system: str
    per_attack: dict = field(default_factory=dict)  # attack -> EER (fraction)
    pooled_eer: float = float("nan")
    min_tdcf: float = float("nan")

    def columns(self) -> list:
        return list(self.per_attack) + ["min t-DCF", "pooled EER"]

    def values(self) -> list:
        """EERs in percent, min t-DCF as a fraction."""
        return [100 * e for e in self.per_attack.values()] + [self.min_tdcf, 100 * self.pooled_eer]

    def to_text(self) -> str:
        return format_table([self])

    def to_csv(self) -> str:
        return format_csv([self])


def breakdown_report(scores: ScoreSet, params: TdcfParams = TdcfParams(), system: str = "system",
                     attacks: Optional[Sequence[str]] = None) -> BreakdownReport:
    """Per-attack EER (all bona fide vs that attack), pooled EER and min t-DCF.

    ``attacks`` fixes the column order; listed attacks without trials are
    omitted with a warning.
    """
    present = scores.attack_types()
    if attacks is None:
        attacks = present
    per_attack = {}
    bona = scores.bonafide_scores()
    for a in attacks:
        spoof = scores.spoof_scores(a)
        if spoof.size == 0:
            warnings.warn(f"attack {a} has no trials; omitted from breakdown", stacklevel=2)
            continue
        per_attack[a] = compute_eer((bona, spoof))[0]
    return BreakdownReport(system, per_attack, compute_eer(scores)[0], compute_min_tdcf(scores, params)[0])


def _cells(report: BreakdownReport) -> list:
    cells = [f"{v:.2f}" for v in report.values()]
    cells[-2] = f"{report.min_tdcf:.4f}"
    return cells


def format_table(reports: Sequence[BreakdownReport]) -> str:
    """Aligned text table, one row per system; EER columns in percent."""
    header = ["System"] + reports[0].columns()
    rows = [header] + [[r.system] + _cells(r) for r in reports]
    for r in reports[1:]:
        if r.columns() != reports[0].columns():
            raise MetricError("reports have different attack columns")
    widths = [max(len(row[c]) for row in rows) for c in range(len(header))]
    lines = []
    for k, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(w) if c == 0 else cell.rjust(w) for c, (cell, w) in enumerate(zip(row, widths))))
        if k == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def format_csv(reports: Sequence[BreakdownReport]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["system"] + reports[0].columns())
    for r in reports:
        writer.writerow([r.system] + [repr(float(v)) for v in r.values()])
    return buf.getvalue()


# -- score files ------------------------------------------------------------------

def format_scores(scores: ScoreSet) -> str:
    return "".join(f"{t} {a} {float(s)!r}\n" for t, a, s in zip(scores.trial_ids, scores.attacks, scores.scores))


def write_scores(path, scores: ScoreSet) -> None:
    Path(path).write_text(format_scores(scores), encoding="utf-8")


def parse_scores(lines: Iterable[str]) -> ScoreSet:
    ids, attacks, values = [], [], []
    for n, line in enumerate(lines, 1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 3:
            raise MetricError(f"line {n}: expected '<trial_id> <attack> <score>', got {line.strip()!r}")
        try:
            values.append(float(parts[2]))
        except ValueError:
            raise MetricError(f"line {n}: score {parts[2]!r} is not a number") from None
        ids.append(parts[0])
        attacks.append(parts[1])
    return ScoreSet(ids, attacks, np.array(values))


def read_scores(path) -> ScoreSet:
    return parse_scores(Path(path).read_text(encoding="utf-8").splitlines())
