import numpy as np
import pytest
from sklearn.base import clone

from glfc import SCTTranslator
from glfc.phantom import PhantomConfig, gen_phantom_pair
from glfc.validation import check_paired, check_slices

TINY = dict(arch="meunet", loss="mcl", input_size=32, channels=(4, 8, 16), token_count=16,
            vss_depths=(1, 1), embed_dims=(8, 8), state_dim=4, max_steps=4, batch_size=2)


def _pairs(n=3, size=40):
    out = [gen_phantom_pair(PhantomConfig(size=size, seed=i)) for i in range(n)]
    return (np.stack([o[1].voxels for o in out]), np.stack([o[0].voxels for o in out]))


def test_check_slices():
    assert check_slices(np.zeros((4, 4))).shape == (1, 4, 4)
    assert check_slices(np.zeros((2, 1, 4, 4))).shape == (2, 4, 4)
    with pytest.raises(ValueError):
        check_slices(np.zeros(5))
    with pytest.raises(ValueError):
        check_slices(np.full((2, 2), np.nan))
    with pytest.raises(ValueError):
        check_paired(np.zeros((1, 4, 4)), np.zeros((1, 4, 5)))


def test_params_roundtrip_and_clone():
    est = SCTTranslator(**TINY)
    assert est.get_params()["token_count"] == 16
    assert clone(est).get_params() == est.get_params()
    est.set_params(lr=0.01)
    assert est.lr == 0.01


def test_predict_before_fit():
    from sklearn.exceptions import NotFittedError
    with pytest.raises(NotFittedError):
        SCTTranslator().predict(np.zeros((1, 8, 8)))


def test_fit_predict_score():
    X, y = _pairs()
    est = SCTTranslator(**TINY).fit(X, y)
    assert est.n_steps_ == 4 and len(est.history_) == 4
    pred = est.predict(X)
    assert pred.shape == X.shape
    assert pred.min() >= -1024 - 1e-6 and pred.max() <= 3000 + 1e-6
    assert -1 <= est.score(X, y) <= 1


def test_fit_is_deterministic():
    X, y = _pairs(2)
    a = SCTTranslator(**TINY).fit(X, y).predict(X)
    b = SCTTranslator(**TINY).fit(X, y).predict(X)
    assert a.tobytes() == b.tobytes()


def test_bad_config_raises_before_training():
    from glfc.errors import ConfigError
    X, y = _pairs(1)
    with pytest.raises(ConfigError):
        SCTTranslator(**{**TINY, "token_count": 15}).fit(X, y)
