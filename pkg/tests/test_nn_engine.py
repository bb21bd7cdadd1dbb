"""Engine gradient checks against finite differences, plus IO and training
contracts."""

import numpy as np
import pytest

from alphafool import nn


def fd_param_grads(model, x, labels, name, h=1e-6):
    """Central finite differences of the CE loss wrt one named parameter."""
    for lname, layer in zip(model.layer_names, model.layers):
        for pname, arr in layer.params.items():
            if f"{lname}/{pname}" != name:
                continue
            grad = np.zeros_like(arr)
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                orig = arr[idx]
                arr[idx] = orig + h
                lp, _ = nn.cross_entropy(model.forward(x).logits, labels)
                arr[idx] = orig - h
                lm, _ = nn.cross_entropy(model.forward(x).logits, labels)
                arr[idx] = orig
                grad[idx] = (lp - lm) / (2 * h)
            return grad
    raise KeyError(name)


def fd_input_grad(model, x, labels, h=1e-6):
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        lp, _ = nn.cross_entropy(model.forward(x).logits, labels)
        x[idx] = orig - h
        lm, _ = nn.cross_entropy(model.forward(x).logits, labels)
        x[idx] = orig
        grad[idx] = (lp - lm) / (2 * h)
    return grad


def assert_close(analytic, fd, rel=1e-4, abs_tol=1e-8):
    err = np.abs(analytic - fd)
    tol = np.maximum(rel * np.abs(fd), abs_tol)
    assert np.all(err <= tol), float(np.max(err / np.maximum(tol, 1e-300)))


def small_dense_net(seed, in_dim=5):
    g = nn.ModelGraph([nn.Dense(in_dim, 4, "tanh"), nn.Dense(4, 3, "sigmoid"),
                       nn.Dense(3, 2, "identity"), nn.Softmax()], (in_dim,))
    g.init_params(seed)
    return g


def small_conv_net(seed, t=5, c=2):
    g = nn.ModelGraph([nn.Conv1D(c, 3, 3, "tanh"), nn.TailConcat(0),
                       nn.Dense(t * 3, 2, "identity"), nn.Softmax()], (t, c))
    g.init_params(seed)
    return g


def small_lstm_net(seed, t=5, c=2, return_sequences=False):
    layers = [nn.LSTM(c, 3, return_sequences=return_sequences)]
    if return_sequences:
        layers += [nn.TailConcat(0), nn.Dense(t * 3, 2, "identity")]
    else:
        layers += [nn.Dense(3, 2, "identity")]
    layers.append(nn.Softmax())
    g = nn.ModelGraph(layers, (t, c))
    g.init_params(seed)
    return g


class TestForward:
    def test_zero_weight_net_gives_uniform_softmax(self):
        g = small_dense_net(0)
        for _, layer in zip(g.layer_names, g.layers):
            for p in layer.params:
                layer.params[p] = np.zeros_like(layer.params[p])
        probs = g.forward(np.random.default_rng(0).normal(size=(6, 5))).probs
        np.testing.assert_allclose(probs, 0.5)

    def test_identity_dense_layer(self):
        layer = nn.Dense(3, 3, "identity")
        layer.params["W"] = np.eye(3)
        layer.params["b"] = np.zeros(3)
        x = np.random.default_rng(1).normal(size=(4, 3))
        y, _ = layer.forward(x, {})
        np.testing.assert_array_equal(y, x)

    def test_lstm_zero_everything_gives_zero_states(self):
        layer = nn.LSTM(2, 3, return_sequences=True)
        # all-zero params including the forget bias
        x = np.zeros((2, 4, 2))
        y, _ = layer.forward(x, {})
        np.testing.assert_array_equal(y, np.zeros((2, 4, 3)))

    def test_shape_mismatch_rejected(self):
        g = small_dense_net(0)
        with pytest.raises(ValueError, match="input shape"):
            g.forward(np.ones((2, 7)))

    def test_non_finite_detected(self):
        g = small_dense_net(0)
        with np.errstate(invalid="ignore"), pytest.raises(nn.NonFiniteError):
            g.forward(np.full((1, 5), np.inf))

    def test_softmax_only_terminal(self):
        with pytest.raises(ValueError, match="terminal"):
            nn.ModelGraph([nn.Softmax(), nn.Dense(2, 2)], (2,))
        with pytest.raises(ValueError, match="terminal"):
            nn.ModelGraph([nn.Dense(2, 2)], (2,))

    def test_softmax_sums_to_one_and_positive(self):
        rng = np.random.default_rng(2)
        for scale in (1e-3, 1.0, 1e3):
            probs = nn.softmax(rng.normal(size=(50, 2)) * scale)
            np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)
            assert np.all(probs > 0)

    def test_extreme_input_scales_stay_finite(self):
        for scale in (1e-3, 1e3):
            g = small_dense_net(3)
            x = np.random.default_rng(4).normal(size=(4, 5)) * scale
            fwd = g.forward(x)
            labels = np.array([0, 1, 0, 1])
            loss, dlogits = nn.cross_entropy(fwd.logits, labels)
            grads, dx = g.backward(fwd, dlogits)
            assert np.isfinite(loss)
            assert all(np.all(np.isfinite(v)) for v in grads.values())
            assert np.all(np.isfinite(dx))


class TestGradients:
    @pytest.mark.parametrize("batch", [1, 7, 32])
    def test_dense_grads(self, batch):
        rng = np.random.default_rng(batch)
        g = small_dense_net(batch)
        x = rng.normal(size=(batch, 5))
        labels = rng.integers(0, 2, size=batch)
        fwd = g.forward(x)
        _, dlogits = nn.cross_entropy(fwd.logits, labels)
        grads, dx = g.backward(fwd, dlogits)
        for name in list(grads):
            assert_close(grads[name], fd_param_grads(g, x, labels, name))
        assert_close(dx, fd_input_grad(g, x, labels))

    @pytest.mark.parametrize("t", [1, 5])
    def test_conv_grads(self, t):
        rng = np.random.default_rng(10 + t)
        g = small_conv_net(t, t=t)
        x = rng.normal(size=(7, t, 2))
        labels = rng.integers(0, 2, size=7)
        fwd = g.forward(x)
        _, dlogits = nn.cross_entropy(fwd.logits, labels)
        grads, dx = g.backward(fwd, dlogits)
        for name in list(grads):
            assert_close(grads[name], fd_param_grads(g, x, labels, name))
        assert_close(dx, fd_input_grad(g, x, labels))

    @pytest.mark.parametrize("t,return_sequences", [(1, False), (5, False), (5, True)])
    def test_lstm_grads(self, t, return_sequences):
        rng = np.random.default_rng(20 + t)
        g = small_lstm_net(20 + t, t=t, return_sequences=return_sequences)
        x = rng.normal(size=(4, t, 2))
        labels = rng.integers(0, 2, size=4)
        fwd = g.forward(x)
        _, dlogits = nn.cross_entropy(fwd.logits, labels)
        grads, dx = g.backward(fwd, dlogits)
        for name in list(grads):
            assert_close(grads[name], fd_param_grads(g, x, labels, name))
        assert_close(dx, fd_input_grad(g, x, labels))

    def test_many_random_trials(self):
        # sweep of small random nets across the three parametric kinds
        rng = np.random.default_rng(77)
        builders = [small_dense_net, small_conv_net, small_lstm_net]
        checked = 0
        for trial in range(34):
            g = builders[trial % 3](trial)
            shape = (3, *g.input_shape)
            x = rng.normal(size=shape)
            labels = rng.integers(0, 2, size=3)
            fwd = g.forward(x)
            _, dlogits = nn.cross_entropy(fwd.logits, labels)
            grads, dx = g.backward(fwd, dlogits)
            name = sorted(grads)[trial % len(grads)]
            assert_close(grads[name], fd_param_grads(g, x, labels, name))
            assert_close(dx, fd_input_grad(g, x, labels))
            checked += 1
        assert checked == 34

    def test_dead_relu_has_zero_weight_gradient(self):
        g = nn.ModelGraph([nn.Dense(3, 2, "relu"), nn.Dense(2, 2, "identity"),
                           nn.Softmax()], (3,))
        g.init_params(0)
        g.layers[0].params["b"] = np.array([-100.0, 0.1])  # unit 0 always dead
        x = np.abs(np.random.default_rng(5).normal(size=(6, 3))) * 0.1
        fwd = g.forward(x)
        _, dlogits = nn.cross_entropy(fwd.logits, np.zeros(6, dtype=int))
        grads, _ = g.backward(fwd, dlogits)
        assert np.all(grads["layer00_dense/W"][:, 0] == 0.0)

    def test_softmax_probs_jacobian(self):
        rng = np.random.default_rng(6)
        layer = nn.Softmax()
        x = rng.normal(size=(3, 4))
        y, cache = layer.forward(x, {})
        dy = rng.normal(size=(3, 4))
        dx, _ = layer.backward(dy, cache, {})
        h = 1e-7
        fd = np.zeros_like(x)
        for idx in np.ndindex(*x.shape):
            up, dn = x.copy(), x.copy()
            up[idx] += h
            dn[idx] -= h
            yu, _ = layer.forward(up, {})
            yd, _ = layer.forward(dn, {})
            fd[idx] = np.sum((yu - yd) / (2 * h) * dy)
        assert_close(dx, fd, rel=1e-5, abs_tol=1e-9)


class TestCrossEntropy:
    def test_uniform_prediction(self):
        loss, _ = nn.cross_entropy(np.zeros((1, 2)), np.array([0]))
        assert loss == pytest.approx(np.log(2.0), rel=1e-12)

    def test_confident_correct_goes_to_zero(self):
        logits = np.array([[40.0, -40.0]])
        loss, _ = nn.cross_entropy(logits, np.array([0]))
        assert loss < 1e-12

    def test_gradient_against_finite_differences(self):
        rng = np.random.default_rng(9)
        logits = rng.normal(size=(5, 2))
        labels = rng.integers(0, 2, size=5)
        _, grad = nn.cross_entropy(logits, labels)
        h = 1e-7
        fd = np.zeros_like(logits)
        for idx in np.ndindex(*logits.shape):
            up, dn = logits.copy(), logits.copy()
            up[idx] += h
            dn[idx] -= h
            fd[idx] = (nn.cross_entropy(up, labels)[0]
                       - nn.cross_entropy(dn, labels)[0]) / (2 * h)
        np.testing.assert_allclose(grad, fd, atol=1e-6)

    def test_label_out_of_range(self):
        with pytest.raises(ValueError, match="label"):
            nn.cross_entropy(np.zeros((2, 2)), np.array([0, 2]))

    def test_one_hot_labels_accepted(self):
        logits = np.array([[0.3, -0.2], [1.0, 0.5]])
        a, ga = nn.cross_entropy(logits, np.array([1, 0]))
        b, gb = nn.cross_entropy(logits, np.array([[0.0, 1.0], [1.0, 0.0]]))
        assert a == b
        np.testing.assert_array_equal(ga, gb)


class TestTraining:
    def test_zero_learning_rate_keeps_params(self):
        g = small_dense_net(1)
        opt = nn.Adam(lr=0.0)
        before = g.get_params()
        rng = np.random.default_rng(2)
        nn.train_step(g, opt, rng.normal(size=(8, 5)), rng.integers(0, 2, 8))
        after = g.get_params()
        for k in before:
            np.testing.assert_array_equal(before[k], after[k])

    def test_training_deterministic_under_seed(self):
        def run():
            g = small_dense_net(3)
            opt = nn.Adam(lr=1e-3)
            rng = np.random.default_rng(4)
            for _ in range(20):
                x = rng.normal(size=(16, 5))
                y = rng.integers(0, 2, 16)
                nn.train_step(g, opt, x, y)
            return g.get_params()

        a, b = run(), run()
        for k in a:
            np.testing.assert_array_equal(a[k], b[k])

    def test_separable_toy_set_reaches_99(self):
        # oracle: a margin-separated 2-feature set is logistic-learnable
        rng = np.random.default_rng(8)
        n = 200
        x = rng.normal(size=(n, 2))
        y = (x[:, 0] + x[:, 1] > 0).astype(int)
        x += 0.25 * np.sign(x[:, 0] + x[:, 1])[:, None]  # widen the margin
        g = nn.ModelGraph([nn.Dense(2, 8, "tanh"), nn.Dense(8, 2, "identity"),
                           nn.Softmax()], (2,))
        g.init_params(0)
        opt = nn.Adam(lr=0.05)
        for step in range(200):
            idx = rng.integers(0, n, size=32)
            nn.train_step(g, opt, x[idx], y[idx])
        preds = g.forward(x).probs.argmax(axis=1)
        assert np.mean(preds == y) >= 0.99

    def test_divergence_guard(self):
        g = small_dense_net(0)
        g.layers[0].params["W"] = g.layers[0].params["W"] * np.nan
        with pytest.raises(nn.NonFiniteError):
            nn.train_step(g, nn.Adam(), np.ones((2, 5)), np.array([0, 1]))


class TestWeightsIO:
    def test_round_trip_bitwise(self, tmp_path):
        g = small_lstm_net(11, t=5)
        x = np.random.default_rng(12).normal(size=(3, 5, 2))
        before = g.forward(x).probs
        path = tmp_path / "w.bin"
        nn.save_weights(g, path)
        loaded = nn.load_weights(path)
        after = loaded.forward(x).probs
        np.testing.assert_array_equal(before, after)

    def test_truncated_file_checksum_error(self, tmp_path):
        g = small_dense_net(13)
        path = tmp_path / "w.bin"
        nn.save_weights(g, path)
        blob = path.read_bytes()
        path.write_bytes(blob[:-10])
        with pytest.raises(nn.WeightsIOError, match="checksum"):
            nn.load_weights(path)

    def test_corrupted_byte_checksum_error(self, tmp_path):
        g = small_dense_net(14)
        path = tmp_path / "w.bin"
        nn.save_weights(g, path)
        blob = bytearray(path.read_bytes())
        blob[len(blob) // 2] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(nn.WeightsIOError, match="checksum"):
            nn.load_weights(path)

    def test_shape_mismatch_names_layer(self, tmp_path):
        g = small_dense_net(15)
        path = tmp_path / "w.bin"
        nn.save_weights(g, path)
        other = nn.ModelGraph([nn.Dense(5, 6, "tanh"), nn.Dense(6, 2, "identity"),
                               nn.Softmax()], (5,))
        other.init_params(0)
        with pytest.raises(nn.WeightsIOError, match="layer00_dense"):
            nn.load_weights(path, model=other)

    def test_version_mismatch(self, tmp_path):
        import json

        g = small_dense_net(16)
        path = tmp_path / "w.bin"
        nn.save_weights(g, path)
        blob = path.read_bytes()
        header_len = int.from_bytes(blob[4:12], "little")
        header = json.loads(blob[12:12 + header_len])
        header["format_version"] = 999
        new_header = json.dumps(header).encode()
        body = (blob[:4] + len(new_header).to_bytes(8, "little") + new_header
                + blob[12 + header_len:-32])
        import hashlib

        path.write_bytes(body + hashlib.sha256(body).digest())
        with pytest.raises(nn.WeightsIOError, match="version"):
            nn.load_weights(path)

    def test_spec_round_trip(self):
        g = small_conv_net(17)
        rebuilt = nn.ModelGraph.from_spec(g.spec())
        assert [l.kind for l in rebuilt.layers] == [l.kind for l in g.layers]
        assert rebuilt.input_shape == g.input_shape
