import math

import numpy as np
import pytest

import xmodal

TINY = """
n_identities = 4
samples_per_modality = 3
latent_dim = 3
input_dim = 6
hidden_dims = 6
feat_dim = 4
dom_feat_dim = 4
reduce_dim = 4
epochs_stage1 = 2
epochs_stage2 = 1
epochs_stage3 = 2
"""


def test_apm_golden_values():
    assert xmodal.apm_loss([110.0], [1]) == 70.0
    assert xmodal.apm_loss([90.0], [-1]) == 60.0
    assert xmodal.apm_loss([100.0], [1]) == xmodal.lmm_loss([100.0], [1]) == 5.0
    assert xmodal.apm_loss([110.0, 90.0], [1, -1]) == 65.0
    assert xmodal.beta_indicator(110.0, 1) == 1
    assert xmodal.beta_indicator(96.0, -1) == 0


def test_generate_is_deterministic():
    a = xmodal.generate(TINY)
    b = xmodal.generate(TINY)
    assert a["train"]["features"].shape == (4 * 3 * 2, 6)
    np.testing.assert_array_equal(a["train"]["features"], b["train"]["features"])
    assert set(a["test"]["domain"].tolist()) == {0, 1}


def test_config_errors():
    with pytest.raises(xmodal.ConfigError):
        xmodal.generate("n_identities = 0\n")
    with pytest.raises(ValueError):
        xmodal.effective_config("bogus_key = 1\n")


def test_protocol_functions():
    scores = np.array([[0.9, 0.7], [0.1, 0.8]])
    assert xmodal.rank1(scores, [0, 1], [0, 1]) == 1.0
    r = xmodal.roc_and_vr(scores, [0, 1], [0, 1], [0.5])
    assert r["vr_at"][0]["vr"] == 1.0
    assert r["vr_at"][0]["threshold"] == 0.8
    assert r["roc"][0] == (0.0, 0.0)
    s = xmodal.cosine_scores(np.array([[1.0, 0.0]]), np.array([[2.0, 0.0], [0.0, 3.0]]))
    assert s[0, 0] == pytest.approx(1.0)
    assert s[0, 1] == 0.0
    with pytest.raises(xmodal.ShapeError):
        xmodal.cosine_scores(np.zeros((1, 2)), np.zeros((1, 3)))


def test_train_and_evaluate(tmp_path):
    xmodal.gen(TINY, tmp_path / "data")
    res = xmodal.train(TINY, tmp_path / "data", tmp_path / "run")
    assert res["completed_stage"] == 3
    assert all(math.isfinite(v) for traj in res["trajectories"] for v in traj)
    rep = xmodal.evaluate(TINY, tmp_path / "run" / "final.xmck", tmp_path / "data", tmp_path / "rep.json")
    assert 0.0 <= rep["rank1"] <= 1.0
    assert rep["n_gallery"] == 4
    assert "stage: 3" in xmodal.inspect(tmp_path / "run" / "final.xmck")
    with pytest.raises(xmodal.DataError):
        xmodal.load_set(tmp_path / "missing.xmds")
