import itertools
import math
import struct
import zlib

import numpy as np
import pytest

from lossgrad.errors import FormatError, ValidationError
from lossgrad.nn import (
    Dataset,
    MlpSpec,
    init_params,
    load_idx,
    make_blobs,
    mlp_objective,
    param_layout,
    read_idx,
    write_idx,
)
from lossgrad.objective import finite_difference_gradient, least_squares_objective

HIDDEN = ("relu", "sigmoid", "identity")


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)


def random_problem(rng, spec, n=12):
    X = rng.normal(size=(n, spec.layer_sizes[0]))
    if spec.loss == "cross_entropy":
        y = rng.integers(0, spec.layer_sizes[-1], n)
    else:
        y = rng.normal(size=(n, spec.layer_sizes[-1]))
    return mlp_objective(spec, Dataset(X, y))


def combos():
    for hidden, final in itertools.product(HIDDEN, HIDDEN):
        yield MlpSpec((4, 5, 3), (hidden, final), "mse")
    for hidden in HIDDEN:
        yield MlpSpec((4, 5, 3), (hidden, "identity"), "cross_entropy")


@pytest.mark.parametrize("spec", list(combos()), ids=lambda s: f"{s.activations}-{s.loss}")
def test_backprop_matches_finite_differences(spec):
    rng = np.random.default_rng(zlib.crc32(repr(spec).encode()))
    for _ in range(20):
        obj = random_problem(rng, spec)
        x = rng.normal(size=obj.dim)
        batch = rng.choice(12, 7, replace=False)
        grad = obj.eval_with_gradient(x, batch).gradient
        assert rel_err(grad, finite_difference_gradient(obj, x, batch, eps=1e-6)) <= 1e-5


def test_deeper_network_gradient():
    rng = np.random.default_rng(0)
    spec = MlpSpec((3, 6, 4, 5, 2), ("relu", "sigmoid", "relu", "identity"), "cross_entropy")
    obj = random_problem(rng, spec, n=20)
    for _ in range(5):
        x = rng.normal(size=obj.dim) * 0.5
        assert rel_err(obj.eval_with_gradient(x).gradient, finite_difference_gradient(obj, x)) <= 1e-5


def test_single_linear_layer_reduces_to_least_squares():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(30, 3))
    y = rng.normal(size=30)
    obj = mlp_objective(MlpSpec((3, 1), ("identity",), "mse"), Dataset(X, y))
    # flat layout is [W (1x3), b]; a column of ones carries the bias
    ls = least_squares_objective(np.hstack([X, np.ones((30, 1))]), y)
    for _ in range(20):
        x = rng.normal(size=4)
        assert obj.eval(x) == pytest.approx(ls.eval(x), rel=1e-12)
        np.testing.assert_allclose(obj.eval_with_gradient(x).gradient, ls.eval_with_gradient(x).gradient, rtol=1e-12)


@pytest.mark.parametrize("k", [2, 3, 10])
def test_cross_entropy_uniform_logits(k):
    spec = MlpSpec((2, k), ("identity",), "cross_entropy")
    obj = mlp_objective(spec, Dataset(np.ones((5, 2)), np.arange(5) % k))
    assert obj.eval(np.zeros(obj.dim)) == pytest.approx(math.log(k), rel=1e-14)


def test_cross_entropy_is_stable_for_huge_logits():
    spec = MlpSpec((1, 2), ("identity",), "cross_entropy")
    obj = mlp_objective(spec, Dataset(np.ones((2, 1)), np.array([0, 1])))
    loss, grad = obj.eval_with_gradient(np.array([1e4, -1e4, 0.0, 0.0]))
    assert math.isfinite(loss) and np.all(np.isfinite(grad))
    assert loss == pytest.approx(1e4)


def test_sigmoid_output_is_stable():
    spec = MlpSpec((1, 1), ("sigmoid",), "mse")
    obj = mlp_objective(spec, Dataset(np.array([[1.0], [-1.0]]), np.array([[0.5], [0.5]])))
    assert math.isfinite(obj.eval(np.array([1e4, 0.0])))


def test_loss_permutation_invariant():
    rng = np.random.default_rng(2)
    spec = MlpSpec((4, 5, 3), ("relu", "identity"), "cross_entropy")
    obj = random_problem(rng, spec, n=12)
    x = rng.normal(size=obj.dim)
    batch = np.arange(12)
    assert obj.eval(x) == obj.eval(x)
    assert obj.eval(x, rng.permutation(batch)) == pytest.approx(obj.eval(x, batch), rel=1e-14)


def test_eval_paths_agree_bitwise():
    rng = np.random.default_rng(3)
    for spec in combos():
        obj = random_problem(rng, spec)
        x = rng.normal(size=obj.dim)
        assert obj.eval(x) == obj.eval_with_gradient(x).loss


class TestInit:
    spec = MlpSpec((4, 7, 3), ("relu", "identity"), "cross_entropy")

    def test_biases(self):
        p = init_params(self.spec, 0)
        for _, b in p.layers():
            assert np.all(b == 0.2)

    def test_deterministic(self):
        np.testing.assert_array_equal(init_params(self.spec, 7).flat, init_params(self.spec, 7).flat)
        assert not np.array_equal(init_params(self.spec, 7).flat, init_params(self.spec, 8).flat)

    def test_weight_std(self):
        big = MlpSpec((400, 250), ("identity",), "mse")
        weights = np.concatenate([W.ravel() for W, _ in init_params(big, 0).layers()])
        assert weights.size == 100_000
        assert 0.049 <= weights.std() <= 0.051
        assert abs(weights.mean()) < 1e-3

    def test_layout_sizes(self):
        assert self.spec.n_params == 4 * 7 + 7 + 7 * 3 + 3
        slots = param_layout(self.spec)
        assert slots[-1].bias.stop == self.spec.n_params


class TestSpecValidation:
    @pytest.mark.parametrize(
        "args",
        [
            ((3,), (), "mse"),
            ((3, 2), ("relu", "relu"), "mse"),
            ((3, 2), ("tanh",), "mse"),
            ((3, 2), ("relu",), "hinge"),
            ((3, 2), ("sigmoid",), "cross_entropy"),
        ],
    )
    def test_bad_spec(self, args):
        with pytest.raises(ValidationError):
            MlpSpec(*args)

    def test_dataset_mismatch(self):
        spec = MlpSpec((3, 2), ("identity",), "cross_entropy")
        with pytest.raises(ValidationError):
            mlp_objective(spec, Dataset(np.zeros((4, 2)), np.zeros(4, dtype=int)))
        with pytest.raises(ValidationError):
            mlp_objective(spec, Dataset(np.zeros((4, 3)), np.array([0, 1, 2, 0])))
        with pytest.raises(ValidationError):
            Dataset(np.zeros((4, 3)), np.zeros(3, dtype=int))


class TestBlobs:
    def test_shape_and_labels(self):
        d = make_blobs(100, seed=0)
        assert d.features.shape == (100, 2)
        assert np.bincount(d.targets).tolist() == [50, 50]

    def test_deterministic(self):
        a, b = make_blobs(50 * 2, seed=3), make_blobs(100, seed=3)
        np.testing.assert_array_equal(a.features, b.features)

    def test_tiny_spread_sits_on_centers(self):
        d = make_blobs(10, centers=((0, 0), (5, 5)), spread=1e-12, seed=0)
        np.testing.assert_allclose(d.features[:5], 0, atol=1e-10)
        np.testing.assert_allclose(d.features[5:], 5, atol=1e-10)

    def test_linearly_separable(self):
        d = make_blobs(1000, centers=((-5, 0), (5, 0)), spread=0.5, seed=0)
        A = np.hstack([d.features, np.ones((1000, 1))])
        w, *_ = np.linalg.lstsq(A, 2.0 * d.targets - 1.0, rcond=None)
        assert np.mean((A @ w > 0) == (d.targets == 1)) == 1.0

    @pytest.mark.parametrize("kwargs", [dict(n=3), dict(n=0), dict(spread=0)])
    def test_invalid(self, kwargs):
        with pytest.raises(ValidationError):
            make_blobs(**kwargs)


def idx_bytes(magic, dims, payload):
    return struct.pack(">I", magic) + struct.pack(f">{len(dims)}I", *dims) + bytes(payload)


class TestIdx:
    def test_hand_built_fixture(self, tmp_path):
        raw = idx_bytes(0x00000803, (1, 2, 2), (0, 255, 128, 64))
        assert len(raw) == 20
        path = tmp_path / "img.idx"
        path.write_bytes(raw)
        d = load_idx(path)
        np.testing.assert_array_equal(d.features, [[0.0, 1.0, 128 / 255, 64 / 255]])

    def test_labels(self, tmp_path):
        (tmp_path / "img").write_bytes(idx_bytes(0x803, (3, 1, 2), range(6)))
        (tmp_path / "lab").write_bytes(idx_bytes(0x801, (3,), (2, 0, 1)))
        d = load_idx(tmp_path / "img", tmp_path / "lab")
        assert d.targets.tolist() == [2, 0, 1]
        assert d.features.shape == (3, 2)

    def test_limit(self, tmp_path):
        (tmp_path / "img").write_bytes(idx_bytes(0x803, (3, 1, 2), range(6)))
        assert load_idx(tmp_path / "img", limit=2).features.shape == (2, 2)

    def test_label_file_with_image_magic(self, tmp_path):
        (tmp_path / "img").write_bytes(idx_bytes(0x803, (1, 1, 1), (0,)))
        (tmp_path / "lab").write_bytes(idx_bytes(0x803, (1, 1, 1), (0,)))
        with pytest.raises(FormatError):
            load_idx(tmp_path / "img", tmp_path / "lab")

    def test_empty_file(self, tmp_path):
        (tmp_path / "empty").write_bytes(b"")
        with pytest.raises(FormatError):
            load_idx(tmp_path / "empty")

    def test_truncated_payload(self, tmp_path):
        (tmp_path / "t").write_bytes(idx_bytes(0x803, (2, 2, 2), (1, 2, 3)))
        with pytest.raises(FormatError):
            load_idx(tmp_path / "t")

    def test_truncated_header(self, tmp_path):
        (tmp_path / "t").write_bytes(struct.pack(">I", 0x803) + b"\x00\x00")
        with pytest.raises(FormatError):
            read_idx(tmp_path / "t")

    def test_write_round_trip(self, tmp_path):
        arr = np.arange(24, dtype=np.uint8).reshape(2, 3, 4)
        write_idx(tmp_path / "x", arr)
        np.testing.assert_array_equal(read_idx(tmp_path / "x", 0x803), arr)
