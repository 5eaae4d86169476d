import numpy as np
import pytest

from glfc.dataset import dataset_build, dataset_iter, resize_nearest
from glfc.errors import DatasetError
from glfc.io import Volume, gvol_write
from glfc.metrics import evaluate_pair
from glfc.phantom import PhantomConfig, gen_phantom_pair


def test_phantom_is_seeded():
    a = gen_phantom_pair(PhantomConfig(size=64, seed=4))
    b = gen_phantom_pair(PhantomConfig(size=64, seed=4))
    assert a[1].voxels.tobytes() == b[1].voxels.tobytes()
    c = gen_phantom_pair(PhantomConfig(size=64, seed=5))
    assert a[0].voxels.tobytes() != c[0].voxels.tobytes()


def test_zero_strength_cbct_equals_ct():
    ct, cb, _ = gen_phantom_pair(PhantomConfig(size=64, seed=0, shading=0, streak=0,
                                               noise=0, drift=0))
    np.testing.assert_array_equal(ct.voxels, cb.voxels)


def test_default_artifacts_degrade_but_keep_structure():
    ct, cb, _ = gen_phantom_pair(PhantomConfig(size=64, seed=2))
    s = evaluate_pair(cb.voxels, ct.voxels).ssim["full"]
    assert 0.5 < s < 0.95


def test_phantom_has_all_tissues():
    _, _, labels = gen_phantom_pair(PhantomConfig(size=64, seed=0))
    assert set(np.unique(labels)) == {0, 1, 2}


def test_resize_nearest():
    img = np.arange(16.0).reshape(4, 4)
    assert resize_nearest(img, 2).tolist() == [[5, 7], [13, 15]]
    assert resize_nearest(img, (4, 4)) is img
    assert resize_nearest(img, (8, 2)).shape == (8, 2)


def _write_pair(d, key, size=32):
    ct, cb, lab = gen_phantom_pair(PhantomConfig(size=size, seed=int(key)))
    gvol_write(cb, d / f"cbct_{key}.gvol")
    gvol_write(ct, d / f"ct_{key}.gvol")
    gvol_write(Volume(lab.astype(np.float32)), d / f"labels_{key}.gvol")


def test_dataset_build(tmp_path):
    for k in ("0001", "0002"):
        _write_pair(tmp_path, k)
    ds = dataset_build(tmp_path)
    assert len(ds) == 2 and ds.keys == ["0001", "0002"]
    x, y = ds.arrays(16)
    assert x.shape == (2, 1, 16, 16) and x.dtype == np.float32
    assert x.min() >= -1 and y.max() <= 1


def test_dataset_orphans(tmp_path):
    _write_pair(tmp_path, "0001")
    (tmp_path / "ct_0001.gvol").rename(tmp_path / "ct_0009.gvol")
    with pytest.raises(DatasetError) as exc:
        dataset_build(tmp_path)
    assert sorted(exc.value.orphans) == ["cbct_0001.gvol", "ct_0009.gvol"]


def test_dataset_iter_order_depends_on_seed_and_epoch():
    x = np.arange(10)[:, None]
    first = [b[0].ravel().tolist() for b in dataset_iter(x, x, batch=4, seed=1, epoch=0)]
    again = [b[0].ravel().tolist() for b in dataset_iter(x, x, batch=4, seed=1, epoch=0)]
    other = [b[0].ravel().tolist() for b in dataset_iter(x, x, batch=4, seed=1, epoch=1)]
    assert first == again != other
    assert [len(b) for b in first] == [4, 4, 2]
    assert sorted(sum(first, [])) == list(range(10))
