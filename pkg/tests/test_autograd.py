import numpy as np
import pytest

from bidrn import ops, train
from bidrn.autograd import Parameter, Var, as_var
from bidrn.errors import ContractError, TrainingError
from bidrn.layers import (BlockResidualMode, BlockResidualSpec, ModuleKind,
                          ModuleSpec, NetworkConfig, build_network)


class TestVar:
    def test_non_scalar_backward_rejected(self):
        v = Var(np.ones(3), requires_grad=True)
        with pytest.raises(ContractError):
            v.backward()

    def test_leaf_gradient_accumulates(self):
        p = Parameter(np.array([2.0, -1.0]))
        loss = ops.l1_loss(p, np.zeros(2))
        loss.backward()
        np.testing.assert_allclose(p.grad, [0.5, -0.5])
        loss2 = ops.l1_loss(p, np.zeros(2))
        loss2.backward()
        np.testing.assert_allclose(p.grad, [1.0, -1.0])

    def test_zero_grad(self):
        p = Parameter(np.array([1.0]))
        ops.l1_loss(p, np.zeros(1)).backward()
        assert p.grad is not None
        p.zero_grad()
        assert p.grad is None

    def test_detach_blocks_gradient(self):
        p = Parameter(np.array([3.0]))
        loss = ops.l1_loss(p.detach(), np.zeros(1))
        loss.backward()
        assert p.grad is None

    def test_shared_node_fan_out(self):
        # y = x + x: gradient through both paths sums to 2
        p = Parameter(np.array([1.0]))
        loss = ops.l1_loss(ops.add(p, p), np.zeros(1))
        loss.backward()
        np.testing.assert_allclose(p.grad, [2.0])

    def test_as_var_passthrough(self):
        v = Var(np.zeros(2))
        assert as_var(v) is v
        assert isinstance(as_var(np.zeros(2)), Var)


class TestSteNodes:
    def test_sign_backward_interior(self):
        # d/dx at 0.5 through the straight-through surrogate is 1.0
        p = Parameter(np.array([0.5]))
        out = ops.sign(p)
        assert out.data[0] == 1.0
        ops.l1_loss(out, np.full(1, 5.0)).backward()
        # l1 slope is -1 here, surrogate slope 2-2x = 1
        np.testing.assert_allclose(p.grad, [-1.0])

    def test_sign_backward_saturated(self):
        p = Parameter(np.array([2.0]))
        ops.l1_loss(ops.sign(p), np.full(1, 5.0)).backward()
        np.testing.assert_allclose(p.grad, [0.0])

    def test_hardtanh_clamps_gradient(self):
        p = Parameter(np.array([2.0, 0.3]))
        ops.l1_loss(ops.hardtanh(p), np.full(2, 5.0)).backward()
        np.testing.assert_allclose(p.grad, [0.0, -0.5])


class TestAdam:
    def test_no_grad_no_update(self):
        p = Parameter(np.array([1.0, 2.0]))
        opt = train.Adam({"p": p}, lr=0.1)
        before = p.data.copy()
        train.adam_step(opt)
        np.testing.assert_array_equal(p.data, before)

    def test_first_step_is_signed_lr(self):
        # with bias correction, step 1 moves each coordinate by lr*sign(g)
        p = Parameter(np.array([1.0, -1.0, 0.5]))
        p.grad = np.array([0.3, -2.0, 1e-3], dtype=np.float32)
        opt = train.Adam({"p": p}, lr=0.1)
        before = p.data.copy()
        train.adam_step(opt)
        np.testing.assert_allclose(p.data, before - 0.1 * np.sign(p.grad), atol=1e-4)

    def test_determinism(self):
        def run():
            p = Parameter(np.array([1.0, 2.0]))
            opt = train.Adam({"p": p}, lr=0.05)
            for _ in range(5):
                p.zero_grad()
                ops.l1_loss(p, np.zeros(2)).backward()
                train.adam_step(opt)
            return p.data.copy()

        np.testing.assert_array_equal(run(), run())

    def test_shape_mismatch_raises(self):
        from bidrn.errors import DimensionError
        p = Parameter(np.array([1.0, 2.0]))
        p.grad = np.zeros(3, dtype=np.float32)
        opt = train.Adam({"p": p})
        with pytest.raises(DimensionError):
            opt.step()


class TestSyntheticTask:
    def test_target_length(self):
        task = train.make_synthetic_task(0)
        assert task.target_len == sum(train.SEGMENTS.values())
        x, y = task.sample(4)
        assert x.shape == (4, 3, 32, 32)
        assert y.shape == (4, task.target_len)

    def test_teacher_deterministic(self):
        a = train.make_synthetic_task(5)
        b = train.make_synthetic_task(5)
        x = np.random.default_rng(0).standard_normal((2, 3, 32, 32)).astype(np.float32)
        np.testing.assert_array_equal(a.teacher(x), b.teacher(x))

    def test_sample_stream_deterministic(self):
        xa, ya = train.make_synthetic_task(5).sample(3)
        xb, yb = train.make_synthetic_task(5).sample(3)
        np.testing.assert_array_equal(xa, xb)
        np.testing.assert_array_equal(ya, yb)

    def test_targets_have_variance(self):
        _, y = train.make_synthetic_task(1).sample(32)
        assert y.std(axis=0).min() > 1e-3


class TestSegmentLosses:
    def test_partition_covers_output(self):
        rng = np.random.default_rng(2)
        total = sum(train.SEGMENTS.values())
        pred = as_var(rng.standard_normal((4, total)).astype(np.float32))
        target = rng.standard_normal((4, total)).astype(np.float32)
        losses = train.segment_losses(pred, target)
        assert set(losses) == set(train.SEGMENTS)
        start = 0
        for name, width in train.SEGMENTS.items():
            want = np.abs(pred.data[:, start:start + width]
                          - target[:, start:start + width]).mean()
            assert abs(losses[name].data - want) < 1e-6
            start += width

    def test_slice_gradient_routing(self):
        p = Parameter(np.zeros((1, sum(train.SEGMENTS.values()))))
        losses = train.segment_losses(p, np.ones_like(p.data))
        losses["box"].backward()
        # only the final two columns receive gradient
        assert np.all(p.grad[:, :-2] == 0)
        assert np.all(p.grad[:, -2:] != 0)


def toy_config():
    return NetworkConfig(
        input_shape=(3, 32, 32),
        blocks=[
            (ModuleSpec(ModuleKind.FUSION_UP, 3, 6),
             BlockResidualSpec(BlockResidualMode.FULL_PRECISION_1X1)),
            (ModuleSpec(ModuleKind.DOWN_SCALE, 6, 6, 2),
             BlockResidualSpec(BlockResidualMode.NONE)),
        ],
        seed=0)


class TestTrainToy:
    def test_zero_steps(self):
        trace, net = train.train_toy(toy_config(), steps=0)
        assert trace == []
        assert net.head_w.data.shape[0] == sum(train.SEGMENTS.values())

    def test_zero_lr_freezes_parameters(self):
        cfg = toy_config()
        ref = build_network(cfg)
        before = {k: v.data.copy() for k, v in ref.named_parameters().items()}
        _, net = train.train_toy(toy_config(), steps=2, lr=0.0, batch=2)
        for name, p in net.named_parameters().items():
            np.testing.assert_array_equal(p.data, before[name])

    def test_trace_shape_and_sum(self):
        trace, _ = train.train_toy(toy_config(), steps=3, batch=2)
        assert len(trace) == 3
        for step, total, *parts in trace:
            assert abs(total - sum(parts)) < 1e-5

    def test_determinism(self):
        ta, _ = train.train_toy(toy_config(), steps=3, batch=2, seed=11)
        tb, _ = train.train_toy(toy_config(), steps=3, batch=2, seed=11)
        assert ta == tb

    def test_loss_decreases_short_run(self):
        trace, _ = train.train_toy(toy_config(), steps=25, batch=4, seed=7)
        first = np.mean([r[1] for r in trace[:5]])
        last = np.mean([r[1] for r in trace[-5:]])
        assert last < first

    def test_non_finite_loss_raises_training_error(self, monkeypatch):
        real = train.make_synthetic_task

        def poisoned(seed, segments=None):
            task = real(seed, segments)
            task.lin_b = np.full_like(task.lin_b, np.nan)
            return task

        monkeypatch.setattr(train, "make_synthetic_task", poisoned)
        with pytest.raises(TrainingError) as exc:
            train.train_toy(toy_config(), steps=2, batch=2)
        assert exc.value.step == 0


class TestTraceCsv:
    def test_header_and_rows(self):
        trace = [(0, 1.5, 0.5, 0.5, 0.5), (1, 1.2, 0.4, 0.4, 0.4)]
        csv = train.trace_to_csv(trace)
        lines = csv.strip().split("\n")
        assert lines[0] == "step,loss_total,loss_param,loss_joint,loss_box"
        assert lines[1].startswith("0,1.500000,")
        assert len(lines) == 3
