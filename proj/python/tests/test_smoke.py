import math

import numpy as np
import pytest

import pboguard


def test_combinatorial_splits():
    splits = pboguard.make_combinatorial(5, 2)
    assert len(splits) == 10
    assert splits[0] == ([2, 3, 4], [0, 1])
    assert pboguard.binomial(14, 7) == 3432
    assert len(pboguard.make_kfold(5)) == 5
    assert pboguard.make_walk_forward(5, 0.6) == [([0, 1, 2], [3, 4])]


def test_pbo_on_noise_and_dominance():
    rng = np.random.default_rng(0)
    noise = rng.standard_normal((280, 10))
    r = pboguard.estimate_pbo(noise, S=14)
    assert r["combination_count"] == 3432
    assert 0.0 <= r["p"] <= 1.0
    assert np.all(np.abs(r["lambdas"]) <= math.log(10) + 1e-12)

    dominant = noise[:, :1] + 0.1 * np.arange(10)
    d = pboguard.estimate_pbo(dominant, S=14)
    assert d["p"] == 0.0
    assert d["verdict"] == "ACCEPT"


def test_sampled_full_space_matches_exhaustive():
    m = np.random.default_rng(1).standard_normal((60, 4))
    full = pboguard.estimate_pbo(m, S=6, mode="exhaustive")
    sampled = pboguard.estimate_pbo(m, S=6, mode="sampled", samples=20, seed=3)
    assert sampled["p"] == full["p"]


def test_gate_and_errors():
    assert pboguard.gate(0.175) == "REJECT"
    assert pboguard.gate(0.079) == "ACCEPT"
    assert pboguard.gate(0.10, 0.10) == "REJECT"
    with pytest.raises(ValueError):
        pboguard.estimate_pbo(np.zeros((10, 2)), S=3)
    with pytest.raises(ValueError):
        pboguard.compute_indicator([1.0, 2.0], "bollinger")


def test_indicator():
    values, warmup = pboguard.compute_indicator([10.0 + t for t in range(40)], "rsi:14")
    assert warmup == 14
    assert np.all(values[warmup:] == 100.0)
    assert np.isnan(values[0])
    assert pboguard.pearson([1, 2, 3], [1, 2, 4]) == pytest.approx(9 / math.sqrt(84))


def test_trials_deterministic():
    a = pboguard.sample_trials(5, "random", 11)
    assert a == pboguard.sample_trials(5, "random", 11)
    assert set(a[0]) == {"step_size", "batch_size", "gamma", "net_dimension", "target_step", "break_step"}


def test_end_to_end_run(tmp_path):
    pboguard.write_synthetic_dataset(str(tmp_path / "data"), seed=3, assets=2, steps=900)
    out = tmp_path / "out"
    report = pboguard.run_experiment(str(tmp_path / "data" / "config.toml"), jobs=2, out=str(out))
    again = pboguard.run_experiment(str(tmp_path / "data" / "config.toml"), jobs=1)
    assert report["content_hash"] == again["content_hash"]
    assert report["verdict"] in ("ACCEPT", "REJECT")
    assert (out / "report.json").exists()
    assert (out / "logit_hist.svg").exists()
    with pytest.raises(pboguard.ConfigError):
        pboguard.run_experiment(str(tmp_path / "missing.toml"))
