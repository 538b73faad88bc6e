import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from simspoof.metrics import (
    BONAFIDE,
    MetricError,
    ScoreSet,
    TdcfParams,
    breakdown_report,
    compute_eer,
    compute_min_tdcf,
    format_csv,
    format_table,
    parse_scores,
    read_scores,
    write_scores,
)

from .oracles import eer_by_sweep, min_tdcf_by_sweep


def tdcf_oracle(bona, spoof, p=TdcfParams()):
    return min_tdcf_by_sweep(list(bona), list(spoof), p.p_spoof, p.p_tar, p.p_non, p.c_miss_cm, p.c_fa_cm,
                             p.c_miss_asv, p.c_fa_asv, p.p_miss_asv, p.p_fa_asv, p.p_miss_spoof_asv)


def random_sets(rng, n_sets, max_trials=200):
    for _ in range(n_sets):
        nb = int(rng.integers(1, max_trials))
        ns = int(rng.integers(1, max_trials - nb + 1))
        # coarse rounding makes ties common
        decimals = int(rng.integers(1, 4))
        bona = np.round(rng.normal(1.0, 1.0, nb), decimals)
        spoof = np.round(rng.normal(0.0, 1.0, ns), decimals)
        yield bona, spoof


# -- EER ------------------------------------------------------------------------

@pytest.mark.parametrize(
    "bona,spoof,eer,thr",
    [
        ([0.9, 0.8], [0.1, 0.2], 0.0, 0.8),
        ([0.1], [0.9], 1.0, 0.9),
        ([0.2, 0.6, 0.8], [0.1, 0.3, 0.5], 1 / 3, 0.5),
        ([0.3, 0.4, 0.9, 0.95], [0.1, 0.35, 0.5], 1 / 3, 0.4 + 0.1 / 3),
        ([0.5, 0.5], [0.5], 0.5, 0.5),
    ],
)
def test_eer_examples(bona, spoof, eer, thr):
    got_eer, got_thr = compute_eer((bona, spoof))
    assert got_eer == pytest.approx(eer, abs=1e-15)
    assert got_thr == pytest.approx(thr, abs=1e-15)


def test_eer_matches_sweep_oracle():
    rng = np.random.default_rng(0)
    for bona, spoof in random_sets(rng, 60):
        assert compute_eer((bona, spoof)) == eer_by_sweep(list(bona), list(spoof))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_eer_invariant_to_increasing_transform(seed):
    rng = np.random.default_rng(seed)
    bona, spoof = next(random_sets(rng, 1, 60))
    eer = compute_eer((bona, spoof))[0]
    for f in (np.exp, lambda v: 3 * v - 7, np.arctan):
        assert compute_eer((f(bona), f(spoof)))[0] == pytest.approx(eer, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_eer_label_swap_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    bona, spoof = next(random_sets(rng, 1, 60))
    got = compute_eer((spoof, bona))[0]
    assert 0.0 <= got <= 1.0
    assert got == eer_by_sweep(list(spoof), list(bona))[0]


def test_eer_one_class_error():
    with pytest.raises(MetricError):
        compute_eer(([0.1, 0.2], []))
    with pytest.raises(MetricError):
        compute_eer(ScoreSet(["a"], [BONAFIDE], [0.3]))


# -- min t-DCF ------------------------------------------------------------------

def test_tdcf_perfect_separation_is_zero():
    assert compute_min_tdcf(([0.9, 0.8], [0.1, 0.2]))[0] == 0.0


def test_tdcf_pinned_example():
    cost, thr = compute_min_tdcf(([0.2, 0.6, 0.8], [0.1, 0.3, 0.5]))
    assert (cost, thr) == pytest.approx((2 / 3, 0.2), abs=1e-12)


def test_tdcf_matches_sweep_oracle():
    rng = np.random.default_rng(1)
    params = TdcfParams(p_miss_asv=0.05, p_fa_asv=0.02, p_miss_spoof_asv=0.3)
    for bona, spoof in random_sets(rng, 40):
        got, _ = compute_min_tdcf((bona, spoof), params)
        assert abs(got - tdcf_oracle(bona, spoof, params)[0]) < 1e-12


def test_tdcf_random_scores_near_one():
    rng = np.random.default_rng(2)
    scores = rng.normal(size=4000)
    labels = rng.permutation(np.arange(4000) < 2000)
    cost = compute_min_tdcf((scores[labels], scores[~labels]))[0]
    assert 0.9 < cost <= 1.0


def test_tdcf_monotone_under_separation():
    rng = np.random.default_rng(3)
    bona, spoof = rng.normal(size=300), rng.normal(size=300)
    costs = [compute_min_tdcf((bona + shift, spoof))[0] for shift in np.linspace(0, 6, 13)]
    assert all(0.0 <= c <= 1.0 for c in costs)
    assert all(b <= a + 1e-15 for a, b in zip(costs, costs[1:]))


def test_tdcf_param_validation():
    with pytest.raises(MetricError):
        TdcfParams(p_spoof=1.5)
    with pytest.raises(MetricError):
        TdcfParams(c_fa_cm=0.0)
    with pytest.raises(MetricError):
        compute_min_tdcf(([1.0], [0.0]), TdcfParams(p_miss_spoof_asv=1.0))


# -- breakdown ------------------------------------------------------------------

def make_scoreset(groups):
    ids, attacks, values = [], [], []
    for label, vals in groups.items():
        for v in vals:
            ids.append(f"t{len(ids)}")
            attacks.append(label)
            values.append(v)
    return ScoreSet(ids, attacks, values)


def test_single_attack_equals_pooled():
    s = make_scoreset({BONAFIDE: [0.2, 0.6, 0.8], "A07": [0.1, 0.3, 0.5]})
    rep = breakdown_report(s)
    assert list(rep.per_attack) == ["A07"]
    assert rep.per_attack["A07"] == rep.pooled_eer


def test_two_attacks_extremes():
    s = make_scoreset({BONAFIDE: [0.6, 0.7, 0.8], "A08": [0.1, 0.2, 0.3], "A09": [0.9, 0.95, 1.0]})
    rep = breakdown_report(s)
    assert rep.per_attack == {"A08": 0.0, "A09": 1.0}
    assert 0.0 < rep.pooled_eer < 1.0
    assert rep.pooled_eer == eer_by_sweep([0.6, 0.7, 0.8], [0.1, 0.2, 0.3, 0.9, 0.95, 1.0])[0]


def test_missing_attack_omitted_with_warning():
    s = make_scoreset({BONAFIDE: [0.6, 0.7], "A07": [0.1]})
    with pytest.warns(UserWarning, match="A19"):
        rep = breakdown_report(s, attacks=["A07", "A19"])
    assert list(rep.per_attack) == ["A07"]


def test_report_layout():
    groups = {BONAFIDE: [0.5, 0.9]}
    groups.update({f"A{k:02d}": [0.1 * (k - 7)] for k in range(7, 20)})
    rep = breakdown_report(make_scoreset(groups), system="RawNet2 SimAM")
    assert rep.columns() == [f"A{k:02d}" for k in range(7, 20)] + ["min t-DCF", "pooled EER"]
    text = rep.to_text().splitlines()
    assert text[0].split()[1:] == [f"A{k:02d}" for k in range(7, 20)] + ["min", "t-DCF", "pooled", "EER"]
    assert text[2].startswith("RawNet2 SimAM")
    rows = rep.to_csv().splitlines()
    assert rows[0] == "system," + ",".join(rep.columns())
    assert len(rows[1].split(",")) == len(rep.columns()) + 1


def test_multi_system_table():
    s = make_scoreset({BONAFIDE: [0.6, 0.7], "A07": [0.1], "A08": [0.9]})
    reps = [breakdown_report(s, system=name) for name in ("wce", "aam")]
    assert len(format_table(reps).splitlines()) == 4
    assert len(format_csv(reps).splitlines()) == 3


# -- score files ----------------------------------------------------------------

def test_score_file_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    s = ScoreSet([f"LA_E_{i}" for i in range(20)], [BONAFIDE, "A07"] * 10, rng.normal(size=20))
    path = tmp_path / "scores.txt"
    write_scores(path, s)
    back = read_scores(path)
    assert back.trial_ids == s.trial_ids and back.attacks == s.attacks
    np.testing.assert_array_equal(back.scores, s.scores)
    assert len(path.read_text().splitlines()) == 20


def test_score_file_errors():
    with pytest.raises(MetricError, match="line 2"):
        parse_scores(["a bonafide 0.1", "b A07"])
    with pytest.raises(MetricError, match="line 1"):
        parse_scores(["a bonafide high"])
    with pytest.raises(MetricError):
        ScoreSet(["a"], [BONAFIDE], [float("nan")])
