import numpy as np
import pytest
from _gradcheck import make_instance

from gimspot.model import (
    APEX_PARAMS,
    INTENSITY_PARAMS,
    PARAM_NAMES,
    CheckpointError,
    backward,
    forward,
    init_params,
    load_checkpoint,
    param_count,
    save_checkpoint,
    sigmoid,
)


def test_param_count_matches_tensors():
    p = init_params(8, 32, 16, 2, seed=0)
    assert p.n_params() == param_count(8, 32, 16, 2) == 1395


def test_init_deterministic_and_biases_zero():
    a, b = init_params(8, seed=3), init_params(8, seed=3)
    for name in PARAM_NAMES:
        np.testing.assert_array_equal(a[name], b[name])
    assert not np.any(a["b0"]) and not np.any(a["b4"])
    assert np.all(np.abs(a["W0"]) <= 1 / np.sqrt(8))


def test_init_rejects_zero_dims():
    with pytest.raises(ValueError):
        init_params(0)


def test_sigmoid_stable_at_extremes():
    z = np.array([-1000.0, -40.0, 0.0, 40.0, 1000.0])
    s = sigmoid(z)
    assert np.all(np.isfinite(s)) and s[2] == 0.5
    np.testing.assert_allclose(sigmoid(z) + sigmoid(-z), 1.0)


def test_forward_shapes_and_ranges(rng):
    p = init_params(8, seed=0)
    tr = forward(p, rng.normal(size=(50, 8)))
    assert tr.a.shape == (50,) and tr.S.shape == (50, 2) and tr.X.shape == (50, 16) and tr.f.shape == (50, 32)
    assert np.all((tr.a > 0) & (tr.a < 1)) and np.all((tr.S > 0) & (tr.S < 1))


def test_forward_rejects_wrong_width(rng):
    with pytest.raises(ValueError):
        forward(init_params(8), rng.normal(size=(5, 7)))


def test_branches_are_decoupled(rng):
    p = init_params(8, seed=1)
    F = rng.normal(size=(20, 8))
    tr = forward(p, F)
    g = backward(p, F, tr, ga=rng.normal(size=20))
    assert all(not np.any(g[n]) for n in APEX_PARAMS)
    g = backward(p, F, tr, gS=rng.normal(size=(20, 2)))
    assert all(not np.any(g[n]) for n in INTENSITY_PARAMS)


def test_backward_rejects_bad_shapes(rng):
    p = init_params(8)
    F = rng.normal(size=(5, 8))
    with pytest.raises(ValueError):
        backward(p, F, forward(p, F), ga=np.zeros(4))


def test_backward_matches_finite_differences_on_linear_probe(rng):
    # L = sum(u * a) + sum(V * S) + sum(W * f): exercises every path
    params, video, _, _ = make_instance(5)
    F = video.features
    u, V, W = rng.normal(size=32), rng.normal(size=(32, 2)), rng.normal(size=(32, 32))

    def value(p):
        tr = forward(p, F)
        return float(u @ tr.a + np.sum(V * tr.S) + np.sum(W * tr.f))

    g = backward(params, F, forward(params, F), ga=u, gS=V, gf=W)
    h = 1e-6
    for name in PARAM_NAMES:
        flat = params.tensors[name].reshape(-1)
        for i in rng.choice(flat.size, size=min(flat.size, 10), replace=False):
            old = flat[i]
            flat[i] = old + h
            vp = value(params)
            flat[i] = old - h
            vm = value(params)
            flat[i] = old
            num = (vp - vm) / (2 * h)
            assert num == pytest.approx(g[name].reshape(-1)[i], rel=1e-5, abs=1e-7)


class TestCheckpoint:
    def test_round_trip_bit_exact_after_first_save(self, tmp_path):
        p = init_params(8, seed=2)
        save_checkpoint(tmp_path / "a.bin", p, epoch=3)
        q, header = load_checkpoint(tmp_path / "a.bin")
        assert header["epoch"] == 3 and header["dims"] == {"D": 8, "De": 32, "Dp": 16, "C": 2}
        save_checkpoint(tmp_path / "b.bin", q, epoch=3)
        assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()
        for name in PARAM_NAMES:
            np.testing.assert_array_equal(q[name], p[name].astype(np.float32))

    def test_version_mismatch(self, tmp_path):
        p = init_params(4)
        save_checkpoint(tmp_path / "a.bin", p)
        raw = bytearray((tmp_path / "a.bin").read_bytes())
        text = raw.replace(b'"version": 1', b'"version": 9')
        (tmp_path / "a.bin").write_bytes(bytes(text))
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(tmp_path / "a.bin")

    def test_bad_magic(self, tmp_path):
        (tmp_path / "a.bin").write_bytes(b"NOPE" + bytes(8))
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "a.bin")

    def test_truncated_blob(self, tmp_path):
        save_checkpoint(tmp_path / "a.bin", init_params(4))
        raw = (tmp_path / "a.bin").read_bytes()
        (tmp_path / "a.bin").write_bytes(raw[:-8])
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "a.bin")
