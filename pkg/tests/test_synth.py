import numpy as np
import pytest

from cpnet import gradcore as gc
from cpnet.dataio import validate_bundle
from cpnet.episodes import EpisodeSpec
from cpnet.errors import ConfigError, RejectionBudgetExceeded
from cpnet.synth import SynthConfig, generate, load_ground_truth, oracle_accuracy, save_ground_truth

SMALL = dict(M=8, d=12, n_base=6, n_val=5, n_novel=6, per_class=20)


def test_zero_noise_features_are_directions():
    bundle, truth = generate(SynthConfig(sigma=0.0, **SMALL))
    f = bundle.embeddings.features
    mu = truth.directions(bundle.embeddings.labels)
    np.testing.assert_allclose(f, mu, atol=1e-7)  # float32 storage
    r = oracle_accuracy(bundle, truth, bundle.split.novel, EpisodeSpec(), 200, 0)
    assert (r.mean_acc, r.ci95) == (100.0, 0.0)


def test_deterministic():
    a, ta = generate(SynthConfig(**SMALL, seed=3))
    b, tb = generate(SynthConfig(**SMALL, seed=3))
    np.testing.assert_array_equal(a.embeddings.features, b.embeddings.features)
    np.testing.assert_array_equal(ta.R_true, tb.R_true)
    c, _ = generate(SynthConfig(**SMALL, seed=4))
    assert not np.array_equal(a.embeddings.features, c.embeddings.features)


def test_geometry_invariants(default_synth):
    bundle, truth = default_synth
    assert np.all(truth.z_true >= 0) and np.all(truth.z_true.sum(axis=1) > 0)
    np.testing.assert_allclose(np.linalg.norm(truth.R_true, axis=1), 1.0, atol=1e-12)
    cos = np.clip(truth.mu_true @ truth.mu_true.T, -1, 1)
    ang = np.arccos(cos[np.triu_indices(len(cos), 1)])
    assert ang.min() >= 0.5
    np.testing.assert_allclose(gc.l2_normalize(truth.z_true @ truth.R_true), truth.mu_true, atol=1e-12)
    validate_bundle(bundle.embeddings, bundle.attributes, bundle.split)
    assert (len(bundle.split.base), len(bundle.split.val), len(bundle.split.novel)) == (40, 10, 10)


def test_noise_isotropic():
    cfg = SynthConfig(M=6, d=8, n_base=50, n_val=25, n_novel=25, per_class=100, sigma=0.4, min_angle=0.1)
    bundle, truth = generate(cfg)
    f = bundle.embeddings.features
    eps = f - truth.directions(bundle.embeddings.labels)
    assert eps.shape[0] == 10_000
    var = eps.var(axis=0)
    np.testing.assert_allclose(var, cfg.sigma ** 2 / cfg.d, rtol=0.1)


def test_oracle_default_high(default_synth):
    bundle, truth = default_synth
    assert oracle_accuracy(bundle, truth, bundle.split.novel, EpisodeSpec(), 500, 0).mean_acc >= 99.0


def test_oracle_monotone_in_sigma():
    accs = []
    for sigma in (0.0, 0.1, 0.3):
        b, t = generate(SynthConfig(sigma=sigma, min_angle=0.2, **SMALL, seed=7))
        accs.append(oracle_accuracy(b, t, b.split.novel, EpisodeSpec(), 300, 0).mean_acc)
    assert accs[0] >= accs[1] >= accs[2]


def test_ground_truth_round_trip(tmp_path):
    _, truth = generate(SynthConfig(**SMALL))
    save_ground_truth(tmp_path / "gt.ckpt", truth)
    back = load_ground_truth(tmp_path / "gt.ckpt")
    assert back.class_ids == truth.class_ids
    np.testing.assert_allclose(back.mu_true, truth.mu_true, atol=1e-7)


def test_rejection_budget():
    with pytest.raises(RejectionBudgetExceeded):
        generate(SynthConfig(M=4, d=3, n_base=30, n_val=5, n_novel=5, per_class=1, min_angle=1.5))


def test_config_errors_name_field():
    with pytest.raises(ConfigError, match="sigma"):
        SynthConfig(sigma=-0.1)
    with pytest.raises(ConfigError, match="bogus"):
        SynthConfig.from_dict({"bogus": 1})
