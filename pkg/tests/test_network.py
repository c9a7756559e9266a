"""Tests for network.py and the checkpoint codec."""
import numpy as np
import pytest

from network import (
    Decoder,
    LrSchedule,
    MlpNetwork,
    MlpSpec,
    NonFiniteGradientError,
    OptimizerState,
    PerFeatureHead,
    ShapeError,
    adamw_step,
    backward,
    cosine_lr,
    forward,
    gradient_check,
    init_params,
    numeric_gradient,
    relative_error,
)
from utils.checkpoint import CheckpointError, decode, encode, load_checkpoint, save_checkpoint

GRAD_TOL = 1e-5


def _random_spec(rng) -> MlpSpec:
    depth = int(rng.integers(1, 4))
    dims = rng.integers(1, 9, size=depth + 1)
    return MlpSpec(int(dims[0]), tuple(int(w) for w in dims[1:-1]), int(dims[-1]))


class TestInit:
    def test_deterministic(self):
        spec = MlpSpec(5, (7, 3), 2)
        a, b = init_params(spec, 11), init_params(spec, 11)
        for p, q in zip(a.parameters(), b.parameters()):
            assert np.array_equal(p, q)

    def test_bounds_and_zero_bias(self):
        net = init_params(MlpSpec(100, (), 20), 0)
        assert np.abs(net.weights[0]).max() <= 0.1
        assert not net.biases[0].any()

    def test_invalid_width(self):
        with pytest.raises(ShapeError):
            MlpSpec(3, (0,), 2)


class TestForward:
    def test_zero_network(self, rng):
        spec = MlpSpec(4, (6,), 3)
        net = MlpNetwork(spec, [np.zeros((4, 6)), np.zeros((6, 3))], [np.zeros(6), np.zeros(3)])
        out, _ = forward(net, rng.normal(size=(5, 4)))
        assert not out.any()

    def test_identity_layer(self, rng):
        net = MlpNetwork(MlpSpec(3, (), 3), [np.eye(3)], [np.zeros(3)])
        batch = rng.normal(size=(4, 3))
        np.testing.assert_array_equal(forward(net, batch)[0], batch)

    def test_matches_reference(self, rng):
        net = init_params(MlpSpec(4, (5, 6), 2), 3)
        batch = rng.normal(size=(7, 4))
        h = np.maximum(batch @ net.weights[0] + net.biases[0], 0)
        h = np.maximum(h @ net.weights[1] + net.biases[1], 0)
        expected = h @ net.weights[2] + net.biases[2]
        np.testing.assert_allclose(forward(net, batch)[0], expected, rtol=1e-12, atol=1e-12)

    def test_wrong_width(self, rng):
        with pytest.raises(ShapeError):
            forward(init_params(MlpSpec(4, (), 2), 0), rng.normal(size=(3, 5)))

    def test_bitwise_repeatable(self, rng):
        net = init_params(MlpSpec(6, (8, 8), 4), 1)
        batch = rng.normal(size=(9, 6))
        assert np.array_equal(forward(net, batch)[0], forward(net, batch)[0])


class TestRelativeError:
    def test_large_entries_are_relative(self):
        assert relative_error(np.array([100.0]), np.array([101.0])) == pytest.approx(1.0 / 101.0)

    def test_small_entries_fall_back_to_absolute(self):
        assert relative_error(np.array([1e-6]), np.array([2e-6])) == pytest.approx(1e-4)
        assert relative_error(np.array([0.0]), np.array([1e-8]), floor=1e-8) == pytest.approx(1.0)

    def test_empty(self):
        assert relative_error(np.empty(0), np.empty(0)) == 0.0


class TestBackward:
    def test_gradient_check_random_networks(self, rng):
        for _ in range(20):
            spec = _random_spec(rng)
            net = init_params(spec, int(rng.integers(1 << 30)))
            for b in net.biases:
                b[...] = rng.normal(size=b.shape) * 0.1
            batch = rng.normal(size=(4, spec.input_dim))
            weights = rng.normal(size=(4, spec.output_dim))

            def loss():
                return float(np.sum(forward(net, batch)[0] * weights))

            net.zero_grad()
            _, cache = forward(net, batch)
            grad_in = backward(net, cache, weights)
            assert gradient_check(loss, net.parameters(), net.gradients()) <= GRAD_TOL
            assert relative_error(grad_in, numeric_gradient(loss, batch)) <= GRAD_TOL

    def test_zero_upstream(self, rng):
        net = init_params(MlpSpec(3, (4,), 2), 0)
        _, cache = forward(net, rng.normal(size=(5, 3)))
        net.zero_grad()
        backward(net, cache, np.zeros((5, 2)))
        assert all(not g.any() for g in net.gradients())

    def test_linear_sum_gives_column_sums(self, rng):
        net = init_params(MlpSpec(3, (), 2), 0)
        batch = rng.normal(size=(6, 3))
        _, cache = forward(net, batch)
        net.zero_grad()
        backward(net, cache, np.ones((6, 2)))
        np.testing.assert_allclose(net.weight_grads[0], np.repeat(batch.sum(axis=0)[:, None], 2, axis=1))
        np.testing.assert_allclose(net.bias_grads[0], [6.0, 6.0])

    def test_stale_cache(self, rng):
        net = init_params(MlpSpec(3, (), 2), 0)
        _, cache = forward(net, rng.normal(size=(5, 3)))
        with pytest.raises(ShapeError):
            backward(net, cache, np.zeros((4, 2)))


class TestPerFeatureHead:
    def test_weight_sharing(self, rng):
        head = PerFeatureHead.init(4, 6, 0)
        emb = rng.normal(size=(3, 1, 4))
        logits = head.forward(np.concatenate([emb, emb], axis=1))
        np.testing.assert_array_equal(logits[:, 0], logits[:, 1])

    def test_identity_affine(self, rng):
        head = PerFeatureHead(np.ones((1, 3)), np.zeros(3))
        emb = rng.normal(size=(2, 4, 1))
        np.testing.assert_array_equal(head.forward(emb), np.repeat(emb, 3, axis=2))

    def test_gradient_check(self, rng):
        for _ in range(20):
            e, t, d = (int(v) for v in rng.integers(1, 6, size=3))
            head = PerFeatureHead.init(e, t, int(rng.integers(1000)))
            emb = rng.normal(size=(3, d, e))
            weights = rng.normal(size=(3, d, t))

            def loss():
                return float(np.sum(head.forward(emb) * weights))

            head.zero_grad()
            grad_emb = head.backward(emb, weights)
            assert gradient_check(loss, head.parameters(), head.gradients()) <= GRAD_TOL
            assert relative_error(grad_emb, numeric_gradient(loss, emb)) <= GRAD_TOL

    def test_decoder_with_head(self, rng):
        d, e, t = 3, 2, 4
        trunk = init_params(MlpSpec(5, (6,), d * e), 1)
        decoder = Decoder(trunk, PerFeatureHead.init(e, t, 2), n_features=d)
        z = rng.normal(size=(4, 5))
        weights = rng.normal(size=(4, d, t))

        def loss():
            return float(np.sum(decoder.forward(z) * weights))

        decoder.zero_grad()
        decoder.forward(z)
        grad_z = decoder.backward(weights)
        assert gradient_check(loss, decoder.parameters(), decoder.gradients()) <= GRAD_TOL
        assert relative_error(grad_z, numeric_gradient(loss, z)) <= GRAD_TOL

    def test_bad_embedding_shape(self, rng):
        with pytest.raises(ShapeError):
            PerFeatureHead.init(4, 3, 0).forward(rng.normal(size=(2, 3, 5)))


class TestAdamW:
    def _step(self, p, g, lr, wd=0.0):
        state = OptimizerState.for_params([p], base_lr=lr, weight_decay=wd)
        adamw_step(state, [p], [g], lr)
        return state

    def test_zero_gradient_fixed_point(self):
        p = np.array([1.5, -2.0])
        self._step(p, np.zeros(2), 1e-3)
        np.testing.assert_array_equal(p, [1.5, -2.0])

    def test_first_step(self):
        p = np.zeros(1)
        state = self._step(p, np.ones(1), 1e-3)
        np.testing.assert_allclose(p, [-1e-3 / (1.0 + 1e-8)], rtol=1e-12)
        assert state.step == 1

    def test_decoupled_decay(self):
        p = np.array([2.0])
        self._step(p, np.zeros(1), 1e-3, wd=1e-5)
        np.testing.assert_allclose(p, [2.0 * (1.0 - 1e-3 * 1e-5)], rtol=1e-15)

    def test_scale_equivariance(self):
        p1, p10 = np.zeros(1), np.zeros(1)
        self._step(p1, np.ones(1), 1e-3)
        self._step(p10, np.full(1, 10.0), 1e-3)
        np.testing.assert_allclose(p1, p10, rtol=1e-7)

    def test_non_finite_gradient_aborts(self):
        p = np.array([1.0, 2.0])
        state = OptimizerState.for_params([p])
        with pytest.raises(NonFiniteGradientError):
            adamw_step(state, [p], [np.array([np.nan, 0.0])], 1e-3)
        np.testing.assert_array_equal(p, [1.0, 2.0])
        assert state.step == 0

    def test_negative_lr(self):
        p = np.zeros(1)
        with pytest.raises(ValueError):
            self._step(p, np.ones(1), -1.0)


class TestCosine:
    def test_endpoints(self):
        schedule = LrSchedule(0.1, 100)
        assert cosine_lr(schedule, 0) == 0.1
        assert cosine_lr(schedule, 100) == 0.0
        assert cosine_lr(schedule, 50) == pytest.approx(0.05)

    def test_monotone(self):
        schedule = LrSchedule(1e-4, 37)
        values = [cosine_lr(schedule, s) for s in range(38)]
        assert all(a >= b for a, b in zip(values, values[1:]))


class TestCheckpoint:
    def test_round_trip_is_bitwise(self, tmp_path, rng):
        for i in range(10):
            spec = _random_spec(rng)
            net = init_params(spec, i)
            path = tmp_path / f"net{i}.tbck"
            save_checkpoint([net], str(path))
            loaded = init_params(spec, 1000 + i)
            load_checkpoint(str(path), expected=[loaded])
            batch = rng.normal(size=(5, spec.input_dim))
            assert np.array_equal(forward(net, batch)[0], forward(loaded, batch)[0])

    def test_multiple_networks_and_head(self):
        nets = [init_params(MlpSpec(3, (4,), 2), 0), PerFeatureHead.init(2, 5, 1)]
        decoded = decode(encode(nets))
        assert len(decoded) == 2
        assert decoded[1][0][0].shape == (2, 5)

    def test_bad_magic(self):
        data = bytearray(encode([init_params(MlpSpec(2, (), 2), 0)]))
        data[:4] = b"XXXX"
        with pytest.raises(CheckpointError, match="magic"):
            decode(bytes(data))

    def test_version_mismatch(self):
        data = bytearray(encode([init_params(MlpSpec(2, (), 2), 0)]))
        data[4] = 9
        with pytest.raises(CheckpointError, match="version"):
            decode(bytes(data))

    def test_truncated(self):
        data = encode([init_params(MlpSpec(2, (3,), 2), 0)])
        with pytest.raises(CheckpointError, match="truncated"):
            decode(data[:-5])

    def test_wrong_spec_names_layer(self, tmp_path):
        path = tmp_path / "n.tbck"
        save_checkpoint([init_params(MlpSpec(3, (4,), 2), 0)], str(path))
        with pytest.raises(CheckpointError, match="layer 0"):
            load_checkpoint(str(path), expected=[init_params(MlpSpec(3, (5,), 2), 0)])
