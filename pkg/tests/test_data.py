import numpy as np
import pytest

from ldmma.data import (DataError, Dataset, bundled_svm_path, gen_elastic_net, gen_sgl, gen_svm, kfold_split,
                        load_dataset, load_libsvm, parse_libsvm, save_dataset, serialize_libsvm)


def test_elastic_net_deterministic():
    a, b = gen_elastic_net(7, 20, 10, 10, 30), gen_elastic_net(7, 20, 10, 10, 30)
    assert a.equals(b)
    assert not a.equals(gen_elastic_net(8, 20, 10, 10, 30))


def test_elastic_net_support_and_splits():
    ds = gen_elastic_net(1, 50, 20, 100, 60)
    beta = np.array(ds.meta["beta"])
    assert np.count_nonzero(beta) == 15 and set(beta[beta != 0]) == {1.0}
    assert [ds.splits[k].size for k in ("train", "val", "test")] == [50, 20, 100]


def test_elastic_net_adjacent_correlation():
    ds = gen_elastic_net(3, 10_000, 1, 1, 20)
    A = ds.dense_features
    corr = np.array([np.corrcoef(A[:, j], A[:, j + 1])[0, 1] for j in range(19)])
    assert abs(corr.mean() - 0.5) <= 0.02
    # each single estimate has standard error about 0.0075
    assert np.all(np.abs(corr - 0.5) <= 0.03)
    lag2 = np.array([np.corrcoef(A[:, j], A[:, j + 2])[0, 1] for j in range(18)])
    assert abs(lag2.mean() - 0.25) <= 0.02


def test_elastic_net_small_p():
    with pytest.raises(DataError, match="p ≥ 15 required"):
        gen_elastic_net(0, 10, 10, 10, 10)


def test_sgl_structure():
    ds = gen_sgl(0, 90, 180, 9)
    beta = np.array(ds.meta["beta"])
    size = 20
    for g in range(3):
        assert np.array_equal(beta[g * size:g * size + 5], [1, 2, 3, 4, 5])
        assert np.all(beta[g * size + 5:(g + 1) * size] == 0)
    assert np.all(beta[3 * size:] == 0)
    assert ds.splits["val"].size == 30 and ds.splits["test"].size == 100
    assert gen_sgl(0, 10, 30, 3).splits["val"].size == 3
    assert gen_sgl(4, 30, 30, 3).equals(gen_sgl(4, 30, 30, 3))


def test_sgl_bad_sizes():
    with pytest.raises(DataError):
        gen_sgl(0, 30, 31, 3)
    with pytest.raises(DataError):
        gen_sgl(0, 30, 12, 3)


def test_parse_examples():
    ds = parse_libsvm("1 1:0.5 3:-2\n")
    assert ds.targets.tolist() == [1.0]
    assert ds.dense_features.tolist() == [[0.5, 0.0, -2.0]]
    ds = parse_libsvm("0 2:1\n")
    assert ds.targets.tolist() == [-1.0]
    assert ds.dense_features.tolist() == [[0.0, 1.0]]


def test_parse_blank_lines_and_width():
    ds = parse_libsvm("\n-1 1:1\n\n+1 4:2 # comment\n")
    assert ds.targets.tolist() == [-1.0, 1.0]
    assert ds.dense_features.shape == (2, 4)


@pytest.mark.parametrize("text, message", [
    ("1 3:1 2:4", "indices not increasing at line 1"),
    ("1 1:1\n1 2:2 2:3", "indices not increasing at line 2"),
    ("1 1:x", "malformed token '1:x' at line 1"),
    ("1 0:1", "malformed token '0:1' at line 1"),
    ("1 5", "malformed token '5' at line 1"),
    ("2 1:1", "not in {-1, 0, 1} at line 1"),
    ("yes 1:1", "bad label 'yes' at line 1"),
])
def test_parse_errors(text, message):
    with pytest.raises(DataError) as err:
        parse_libsvm(text)
    assert message in str(err.value)


def test_libsvm_roundtrip():
    ds = gen_svm(5, 30, 4)
    text = serialize_libsvm(ds)
    again = parse_libsvm(text)
    assert again.equals(ds)
    assert serialize_libsvm(again) == text


def test_bundled_file():
    ds = load_libsvm(bundled_svm_path())
    assert ds.dense_features.shape == (100, 10)
    assert set(ds.targets.tolist()) == {-1.0, 1.0}


def test_kfold_examples():
    folds = kfold_split(6, 3, 0)
    assert np.bincount(folds).tolist() == [2, 2, 2]
    assert np.array_equal(folds, kfold_split(6, 3, 0))
    for n, K in ((10, 3), (7, 7), (100, 6)):
        f = kfold_split(n, K, 1)
        counts = np.bincount(f, minlength=K)
        assert counts.sum() == n and counts.max() - counts.min() <= 1


def test_kfold_errors():
    with pytest.raises(DataError):
        kfold_split(2, 3, 0)
    with pytest.raises(DataError):
        kfold_split(5, 1, 0)


def test_dataset_rejects_overlapping_splits():
    with pytest.raises(DataError):
        Dataset(np.eye(3), np.zeros(3), {"train": [0, 1], "val": [1, 2]})


def test_csv_roundtrip(tmp_path):
    ds = gen_elastic_net(2, 5, 4, 3, 16)
    csv_path, json_path = save_dataset(ds, tmp_path / "en")
    assert csv_path.exists() and json_path.exists()
    back = load_dataset(csv_path)
    assert back.equals(ds)
    assert back.meta == ds.meta
