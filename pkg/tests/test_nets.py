import numpy as np
import pytest

from cyclefusion import errors
from cyclefusion import autodiff as ad
from cyclefusion.hpo import DESK_SPACE, FULL_SPACE, sample_hp
from cyclefusion.nets import (HyperParams, NetBuilder, Network, TrainConfig, build_2lcnn,
                              build_tcocnn, config_from_json, config_to_json, conv_stack, evaluate,
                              kernel_widths, load_checkpoint, make_inputs, predict, save_checkpoint,
                              train)
from cyclefusion.preprocess import split_random


def hp(**kw):
    base = dict(initial_lr=1e-4, n_filters_12=4, kernel_12=10, stride_1=10, dropout_rate=0.3,
                fc_neurons=16)
    base.update(kw)
    return HyperParams(**base)


def corners(space):
    names = ["n_filters_12", "kernel_12", "stride_1"]
    for bits in range(8):
        kw = {n: getattr(space, n)[(bits >> i) & 1] for i, n in enumerate(names)}
        yield hp(**kw)


def stack_oracle(rows, length, h):
    """Walk the layer arithmetic by hand."""
    cur = (length - min(h.kernel_12, length)) // h.stride_1 + 1
    lengths = [cur]
    for w in kernel_widths(h.kernel_12):
        k = max(min(w, cur), min(2, cur))
        cur = cur - k + 1
        lengths.append(cur)
    return lengths


class TestArchitecture:
    def test_kernel_widths_decay(self):
        widths = kernel_widths(300)
        assert len(widths) == 9
        assert widths[0] == 300 and widths[-1] == 10
        assert all(a >= b for a, b in zip(widths, widths[1:]))
        assert kernel_widths(10) == [10] * 9

    def test_first_layer_spans_sensors(self):
        cfg = build_tcocnn(hp(), (5, 600))
        first = cfg.convs[0][0]
        assert first.kernel == (5, 10) and first.stride == (1, 10)
        assert all(spec.kernel[0] == 1 for spec in cfg.convs[0][1:])
        assert len(cfg.convs[0]) == 10

    @pytest.mark.parametrize("space,length", [(DESK_SPACE, 600), (FULL_SPACE, 6000)])
    def test_corner_shapes(self, space, length):
        for h in corners(space):
            for rows in (1, 17):
                stack = conv_stack(rows, length, h)
                assert [s.out_length for s in stack] == stack_oracle(rows, length, h)
                assert all(s.out_length >= 1 for s in stack)

    def test_random_draws_forward(self):
        gen = np.random.default_rng(7)
        for _ in range(50):
            h = sample_hp(DESK_SPACE, gen)
            h = hp(kernel_12=h.kernel_12, stride_1=h.stride_1, dropout_rate=h.dropout_rate)
            rows = int(gen.integers(1, 4))
            net = Network(build_tcocnn(h, (rows, 600)), seed=1)
            out = net.forward([gen.standard_normal((2, rows, 600))])
            assert out.shape == (2, 4)
            assert np.isfinite(out.data).all()

    @pytest.mark.parametrize("length", [10, 11, 39, 60, 100])
    def test_short_inputs_still_valid(self, length):
        net = Network(build_tcocnn(hp(), (2, length)))
        stack = net.config.convs[0]
        assert stack[-1].out_length >= 1
        assert net.forward([np.zeros((1, 2, length))]).shape == (1, 4)

    def test_length_39_arithmetic(self):
        # (39 - 10) // 10 + 1 = 3; layer 2 clamps its kernel to 3 -> 1; later layers keep width 1
        assert stack_oracle(1, 39, hp()) == [3] + [1] * 9
        assert [s.out_length for s in conv_stack(1, 39, hp())] == [3] + [1] * 9

    def test_too_short(self):
        with pytest.raises(errors.InputTooShort):
            build_tcocnn(hp(stride_1=17), (1, 16))

    def test_two_lane_needs_two(self):
        with pytest.raises(errors.UsageError):
            build_2lcnn(hp(), [(1, 600)])
        cfg = build_2lcnn(hp(), [(1, 600), (1, 600)])
        assert cfg.lanes == 2
        assert cfg.flat_features == 2 * build_tcocnn(hp(), (1, 600)).flat_features

    def test_builder(self):
        assert NetBuilder("tcocnn", ((3, 600),))(hp()) == build_tcocnn(hp(), (3, 600))
        with pytest.raises(errors.UsageError):
            NetBuilder("rnn", ((3, 600),))(hp())

    def test_init(self):
        net = Network(build_tcocnn(hp(), (2, 100)), seed=3)
        state = net.state()
        assert all((v == 0).all() for k, v in state.items() if k.endswith("bias"))
        k1 = state["lane0.conv1.kernel"]
        assert np.abs(k1).max() <= np.sqrt(6 / (2 * 10))
        again = Network(build_tcocnn(hp(), (2, 100)), seed=3).state()
        for k in state:
            np.testing.assert_array_equal(state[k], again[k])

    def test_forward_lane_count(self):
        net = Network(build_tcocnn(hp(), (1, 100)))
        with pytest.raises(errors.ShapeMismatch):
            net.forward([np.zeros((1, 1, 100))] * 2)


class TestSymmetry:
    def test_sensor_permutation(self, rng):
        net = Network(build_tcocnn(hp(), (3, 100)), seed=0)
        x = rng.standard_normal((4, 3, 100))
        perm = [2, 0, 1]
        permuted = Network(net.config, seed=0)
        state = net.state()
        state["lane0.conv1.kernel"] = state["lane0.conv1.kernel"][:, :, perm, :]
        permuted.load_state(state)
        np.testing.assert_allclose(permuted.forward([x[:, perm]]).data, net.forward([x]).data,
                                   rtol=1e-12, atol=1e-12)

    def test_lane_swap(self, rng):
        cfg = build_2lcnn(hp(), [(1, 100), (1, 100)])
        net = Network(cfg, seed=2)
        a, b = rng.standard_normal((3, 1, 100)), rng.standard_normal((3, 1, 100))
        state = net.state()
        swapped = {}
        for name, value in state.items():
            if name.startswith("lane0."):
                swapped["lane1." + name[6:]] = value
            elif name.startswith("lane1."):
                swapped["lane0." + name[6:]] = value
            else:
                swapped[name] = value
        half = cfg.flat_features // 2
        w = state["fc.weight"]
        swapped["fc.weight"] = np.concatenate([w[:, half:], w[:, :half]], axis=1)
        other = Network(cfg)
        other.load_state(swapped)
        np.testing.assert_allclose(other.forward([b, a]).data, net.forward([a, b]).data,
                                   rtol=1e-12, atol=1e-12)

    def test_network_gradients(self, rng):
        net = Network(build_2lcnn(hp(n_filters_12=2, fc_neurons=5), [(1, 40), (2, 40)]), seed=1)
        x = [rng.standard_normal((2, 1, 40)), rng.standard_normal((2, 2, 40))]
        y = np.array([0, 3])
        # keep pre-activations off the ReLU kink, where finite differences are meaningless
        for p in net.params:
            if p.name.endswith("bias"):
                p.data = rng.uniform(0.05, 0.2, p.data.shape)
        report = ad.grad_check(lambda: ad.softmax_cross_entropy(net.forward(x), y), net.params,
                               max_coords=20)
        assert report.passed, str(report)


@pytest.fixture(scope="module")
def separable_inputs(separable):
    split = split_random(separable.n_cycles, 0)
    inputs = make_inputs(separable, [["PS1", "PS2"]], 600, split.train)
    return inputs, separable.targets, split


class TestTraining:
    def test_make_inputs_normalized(self, separable_inputs):
        inputs, _, split = separable_inputs
        train_part = inputs[0][split.train]
        np.testing.assert_allclose(train_part.mean(axis=(0, 2)), 0, atol=1e-9)
        np.testing.assert_allclose(train_part.std(axis=(0, 2)), 1, atol=1e-6)

    def test_separable_learns(self, separable_inputs):
        inputs, y, split = separable_inputs
        net = Network(build_tcocnn(hp(n_filters_12=40, fc_neurons=200), (2, 600)), seed=0)
        report = train(net, inputs, y, split, TrainConfig(epochs=25, seed=0, patience=25), lr=1e-3)
        assert report.train_loss[-1] < report.train_loss[0]
        assert evaluate(net, inputs, y, split.test) <= 0.1

    def test_deterministic(self, separable_inputs):
        inputs, y, split = separable_inputs
        runs = []
        for _ in range(2):
            net = Network(build_tcocnn(hp(), (2, 600)), seed=5)
            report = train(net, inputs, y, split, TrainConfig(epochs=3, seed=5), lr=1e-3)
            runs.append((report.val_loss, net.state()))
        assert runs[0][0] == runs[1][0]
        for k in runs[0][1]:
            np.testing.assert_array_equal(runs[0][1][k], runs[1][1][k])

    def test_zero_epochs(self, separable_inputs):
        inputs, y, split = separable_inputs
        net = Network(build_tcocnn(hp(), (2, 600)), seed=1)
        before = net.state()
        report = train(net, inputs, y, split, TrainConfig(epochs=0), lr=1e-3)
        assert report.train_loss == [] and report.best_epoch == -1
        assert np.isfinite(report.best_val_loss)
        for k in before:
            np.testing.assert_array_equal(net.state()[k], before[k])

    def test_best_weights_restored(self, separable_inputs):
        inputs, y, split = separable_inputs
        net = Network(build_tcocnn(hp(), (2, 600)), seed=2)
        report = train(net, inputs, y, split, TrainConfig(epochs=6, seed=2, patience=2), lr=3e-3)
        assert report.best_val_loss == min(report.val_loss)
        from cyclefusion.nets import loss_and_error
        assert loss_and_error(net, inputs, y, split.val)[0] == pytest.approx(report.best_val_loss)
        assert "epoch,train_loss" in report.curves_csv()
        assert len(report.curves_csv().splitlines()) == len(report.val_loss) + 1

    def test_loss_decreases_over_seeds(self, separable_inputs):
        inputs, y, split = separable_inputs
        small = (inputs[0][:, :, :100],)
        decreased = 0
        for seed in range(50):
            net = Network(build_tcocnn(hp(n_filters_12=3, fc_neurons=8), (2, 100)), seed=seed)
            report = train(net, list(small), y, split, TrainConfig(epochs=5, seed=seed), lr=1e-3)
            decreased += report.train_loss[-1] < report.train_loss[0]
        assert decreased >= 45

    def test_divergence(self, separable_inputs):
        inputs, y, split = separable_inputs
        net = Network(build_tcocnn(hp(), (2, 600)), seed=0)
        with np.errstate(all="ignore"), pytest.raises(errors.DivergenceDetected) as exc:
            train(net, inputs, y, split, TrainConfig(epochs=5), lr=1e300)
        assert exc.value.report.status == "diverged"

    def test_train_config_validation(self):
        with pytest.raises(errors.UsageError):
            TrainConfig(epochs=-1)
        assert TrainConfig(epochs=30).decay_epoch == 20
        assert TrainConfig(epochs=100).decay_epoch == 67


class TestEvaluate:
    def test_counts(self):
        net = Network(build_tcocnn(hp(), (1, 20)), seed=0)
        state = net.state()
        for k in state:
            state[k] = np.zeros_like(state[k])
        state["out.bias"] = np.array([0.0, 1.0, 0.0, 0.0])
        net.load_state(state)
        x = [np.zeros((5, 1, 20))]
        y = np.array([1, 1, 0, 2, 1])
        np.testing.assert_array_equal(predict(net, x), [1] * 5)
        assert evaluate(net, x, y, np.arange(5)) == pytest.approx(0.4)
        with pytest.raises(errors.EmptyEvaluation):
            evaluate(net, x, y, [])

    def test_checkpoint_round_trip(self, tmp_path, rng):
        net = Network(build_2lcnn(hp(), [(1, 50), (2, 50)]), seed=4)
        save_checkpoint(net, tmp_path / "net.npz")
        loaded = load_checkpoint(tmp_path / "net.npz")
        assert loaded.config == net.config
        x = [rng.standard_normal((3, 1, 50)), rng.standard_normal((3, 2, 50))]
        np.testing.assert_array_equal(loaded.forward(x).data, net.forward(x).data)
        assert config_from_json(config_to_json(net.config)) == net.config
