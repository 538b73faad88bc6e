import wave

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from simspoof.data import (
    BONAFIDE,
    DataError,
    SynthConfig,
    TrialRecord,
    crop_or_tile,
    export_corpus,
    generate_synthetic_corpus,
    load_corpus_dir,
    load_waveform,
    parse_protocol,
    parse_protocol_lines,
    serialize_protocol,
    write_pcm,
)


# -- protocol -------------------------------------------------------------------

def test_parse_protocol_examples():
    recs = parse_protocol_lines(["LA_0079 LA_T_1138215 - - bonafide", "", "LA_0079 LA_T_1007571 - A01 spoof"])
    assert recs[0] == TrialRecord("LA_T_1138215", BONAFIDE, "train", "", "LA_0079")
    assert recs[1].label == "A01" and not recs[1].is_bonafide and recs[1].binary_label == 1


@pytest.mark.parametrize(
    "line",
    ["LA_0079 LA_T_1 - - spoof", "LA_0079 LA_T_1 - A01 bonafide", "LA_0079 LA_T_1 - A01", "a b - - maybe"],
)
def test_parse_protocol_malformed(line):
    with pytest.raises(DataError, match="line 2"):
        parse_protocol_lines(["LA_0001 LA_T_0 - - bonafide", line])


def test_parse_protocol_duplicate():
    with pytest.raises(DataError, match="duplicate"):
        parse_protocol_lines(["s t1 - - bonafide", "s t1 - A01 spoof"])


def test_parse_protocol_empty_file(tmp_path):
    path = tmp_path / "empty.txt"
    path.write_text("")
    with pytest.warns(UserWarning):
        assert parse_protocol(path) == []


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.sampled_from([BONAFIDE, "A01", "A07", "A19"]), st.integers(0, 99)),
                max_size=20))
def test_protocol_round_trip(items):
    records = [TrialRecord(f"T_{i:04d}", label, "dev", "", f"SPK_{spk}") for i, (label, spk) in enumerate(items)]
    assert parse_protocol_lines(serialize_protocol(records).splitlines(), "dev") == records


def test_protocol_audio_paths(tmp_path):
    path = tmp_path / "p.txt"
    path.write_text("s t1 - - bonafide\n")
    (rec,) = parse_protocol(path, "eval", tmp_path / "wav")
    assert rec.source == str(tmp_path / "wav" / "t1.wav") and rec.partition == "eval"


# -- audio ----------------------------------------------------------------------

def test_waveform_scaling(tmp_path):
    path = tmp_path / "a.wav"
    write_pcm(path, np.array([16384, -32768, 0], dtype=np.int16))
    np.testing.assert_array_equal(load_waveform(path), [0.5, -1.0, 0.0])


def test_waveform_round_trip(tmp_path):
    pcm = np.random.default_rng(0).integers(-32768, 32768, size=1000).astype(np.int16)
    path = tmp_path / "r.wav"
    write_pcm(path, pcm)
    np.testing.assert_array_equal(load_waveform(path) * 32768, pcm)


def test_waveform_format_errors(tmp_path):
    stereo = tmp_path / "s.wav"
    write_pcm(stereo, np.zeros(10, dtype=np.int16), channels=2)
    with pytest.raises(DataError, match="mono"):
        load_waveform(stereo)
    slow = tmp_path / "r.wav"
    write_pcm(slow, np.zeros(10, dtype=np.int16), sample_rate=8000)
    with pytest.raises(DataError, match="8000"):
        load_waveform(slow)
    wide = tmp_path / "w.wav"
    with wave.open(str(wide), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(1)
        w.setframerate(16000)
        w.writeframes(bytes(10))
    with pytest.raises(DataError, match="16-bit"):
        load_waveform(wide)
    junk = tmp_path / "j.wav"
    junk.write_bytes(b"not audio")
    with pytest.raises(DataError):
        load_waveform(junk)


# -- segmentation ---------------------------------------------------------------

def test_crop_eval_mode():
    np.testing.assert_array_equal(crop_or_tile(np.arange(10), 4), [0, 1, 2, 3])


def test_tile_short_input():
    np.testing.assert_array_equal(crop_or_tile(np.array([1, 2, 3]), 7), [1, 2, 3, 1, 2, 3, 1])


def test_train_crop_reproducible():
    x = np.arange(100)
    a = [crop_or_tile(x, 10, np.random.default_rng(5)) for _ in range(2)]
    np.testing.assert_array_equal(a[0], a[1])
    assert a[0][0] == a[0][-1] - 9


def test_segment_errors():
    with pytest.raises(DataError):
        crop_or_tile(np.array([]), 4)
    with pytest.raises(DataError):
        crop_or_tile(np.ones(3), 0)


# -- synthetic corpus -----------------------------------------------------------

SMALL = dict(samples_per_class=6, dev_per_class=3, eval_per_class=3)


def test_corpus_counts():
    cfg = SynthConfig(n_train_attacks=6, samples_per_class=20)
    corpus = generate_synthetic_corpus(cfg)
    train = corpus.partition("train")
    assert sum(r.is_bonafide for r in train) == 20
    assert sum(not r.is_bonafide for r in train) == 6 * 20
    assert corpus.attack_ids("train") == cfg.train_attacks
    assert set(corpus.attack_ids("eval")) == set(cfg.train_attacks + cfg.eval_attacks)
    assert len({r.trial_id for r in corpus.records}) == len(corpus.records)
    assert all(corpus.waves[r.trial_id].shape == (1600,) for r in corpus.records)
    longer = generate_synthetic_corpus(SynthConfig(utterance_len=4000, **SMALL))
    assert all(w.shape == (4000,) for w in longer.waves.values())


def test_corpus_bitwise_deterministic():
    a = generate_synthetic_corpus(SynthConfig(seed=3, **SMALL))
    b = generate_synthetic_corpus(SynthConfig(seed=3, **SMALL))
    assert a.records == b.records and a.attacks == b.attacks
    assert all(a.waves[k].tobytes() == b.waves[k].tobytes() for k in a.waves)
    c = generate_synthetic_corpus(SynthConfig(seed=4, **SMALL))
    assert any(a.waves[k].tobytes() != c.waves[k].tobytes() for k in a.waves)


def test_train_and_eval_types_disjoint():
    cfg = SynthConfig()
    specs = generate_synthetic_corpus(SynthConfig(**SMALL)).attacks
    assert not set(cfg.train_attacks) & set(cfg.eval_attacks)
    for s in specs:
        lo, hi = cfg.train_param_range if s.attack in cfg.train_attacks else cfg.eval_param_range
        assert lo <= s.strength <= hi


def test_overlapping_ranges_rejected():
    with pytest.raises(DataError, match="overlap"):
        SynthConfig(train_param_range=(0.0, 0.6), eval_param_range=(0.5, 1.0))


def test_bonafide_is_band_limited():
    corpus = generate_synthetic_corpus(SynthConfig(**SMALL))
    for r in corpus.partition("train"):
        if r.is_bonafide:
            p = np.abs(np.fft.rfft(corpus.waves[r.trial_id])) ** 2
            freqs = np.fft.rfftfreq(1600, 1 / 16000)
            assert p[freqs > 4200].sum() < 1e-3 * p.sum()


def band_features(x, bands=16):
    p = np.abs(np.fft.rfft(x)) ** 2
    return np.log(np.array([b.sum() for b in np.array_split(p, bands)]) + 1e-12)


def test_attacks_are_linearly_separable_from_bonafide():
    cfg = SynthConfig(samples_per_class=40)
    corpus = generate_synthetic_corpus(cfg)
    train = corpus.partition("train")
    bona = [band_features(corpus.waves[r.trial_id]) for r in train if r.is_bonafide]
    rng = np.random.default_rng(0)
    for attack in cfg.train_attacks:
        spoof = [band_features(corpus.waves[r.trial_id]) for r in train if r.label == attack]
        X = np.c_[np.array(bona + spoof), np.ones(len(bona) + len(spoof))]
        y = np.r_[np.ones(len(bona)), -np.ones(len(spoof))]
        order = rng.permutation(len(y))
        fit, held = order[: len(y) // 2], order[len(y) // 2:]
        w = np.linalg.lstsq(X[fit], y[fit], rcond=None)[0]
        accuracy = np.mean(np.sign(X[held] @ w) == y[held])
        assert accuracy >= 0.9, attack


def test_export_and_reload(tmp_path):
    corpus = generate_synthetic_corpus(SynthConfig(**SMALL))
    paths = export_corpus(corpus, tmp_path)
    assert set(paths) == {"train", "dev", "eval"}
    loaded = load_corpus_dir(tmp_path)
    assert [(r.trial_id, r.label, r.partition) for r in loaded.records] == \
        [(r.trial_id, r.label, r.partition) for r in corpus.records]
    r = loaded.records[0]
    np.testing.assert_allclose(loaded.waveform(r), corpus.waves[r.trial_id], atol=1 / 32768)
    with pytest.raises(DataError):
        load_corpus_dir(tmp_path / "missing")
