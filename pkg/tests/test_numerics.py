import math

import numpy as np
import pytest

from treeprompt import autodiff as ad
from treeprompt.autodiff import (
    DisconnectedParameter,
    ShapeMismatch,
    Tape,
    Tensor,
    attention,
    backward,
    cross_entropy_logits,
    grad_check,
    l2norm,
    layer_norm,
    linear,
    mlp2,
    softmax_rows,
)
from treeprompt.checkpoint import (
    CheckpointError,
    checkpoint_hash,
    load_checkpoint,
    save_checkpoint,
)
from treeprompt.optim import AdamW, adamw_step


def t64(data, requires_grad=True, name=None):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad, name=name)


class TestL2Norm:
    def test_three_four(self):
        out = l2norm(Tensor([3.0, 4.0]))
        np.testing.assert_allclose(out.data, [0.6, 0.8], rtol=1e-6)

    def test_zero_vector_stays_zero(self):
        out = l2norm(Tensor([0.0, 0.0, 0.0]))
        np.testing.assert_array_equal(out.data, [0.0, 0.0, 0.0])

    def test_random_400_dim_unit_norm(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=400)
        out = l2norm(Tensor(x)).data
        # oracle: recompute the norm with plain python accumulation
        norm = math.sqrt(sum(float(v) * float(v) for v in out))
        assert 1.0 - 1e-6 <= norm <= 1.0 + 1e-6


class TestLinear:
    def test_zero_weights(self):
        out = linear(Tensor([1.0, 2.0]), Tensor(np.zeros((3, 2))), Tensor(np.zeros(3)))
        np.testing.assert_array_equal(out.data, np.zeros(3))

    def test_hand_case(self):
        out = linear(Tensor([2.0, 3.0]), Tensor([[1.0, 1.0]]), Tensor([0.0]))
        np.testing.assert_allclose(out.data, [5.0])

    def test_random_400_to_64_matches_triple_loop(self):
        rng = np.random.default_rng(11)
        x = rng.normal(size=400)
        w = rng.normal(size=(64, 400))
        b = rng.normal(size=64)
        got = linear(Tensor(x), Tensor(w), Tensor(b)).data
        expected = np.empty(64)
        for i in range(64):
            acc = 0.0
            for j in range(400):
                acc += w[i, j] * x[j]
            expected[i] = acc + b[i]
        np.testing.assert_allclose(got, expected, rtol=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            linear(Tensor([1.0, 2.0, 3.0]), Tensor(np.zeros((3, 2))), Tensor(np.zeros(3)))


class TestMlp2:
    def zeros(self, d_in, hidden, d_out):
        return (
            Tensor(np.zeros((hidden, d_in))),
            Tensor(np.zeros(hidden)),
            Tensor(np.zeros((d_out, hidden))),
            Tensor(np.zeros(d_out)),
        )

    def test_all_zero_weights(self):
        w1, b1, w2, b2 = self.zeros(4, 2, 2)
        out = mlp2(Tensor([1.0, 2.0, 3.0, 4.0]), w1, b1, w2, b2)
        np.testing.assert_array_equal(out.data, [0.0, 0.0])

    def test_negative_preactivations_give_bias(self):
        w1 = Tensor([[1.0, 0.0], [0.0, 1.0]])
        b1 = Tensor([0.0, 0.0])
        w2 = Tensor(np.eye(2))
        b2 = Tensor([0.5, -0.25])
        out = mlp2(Tensor([-3.0, -1.0]), w1, b1, w2, b2)
        np.testing.assert_array_equal(out.data, b2.data)

    def test_hand_case(self):
        w1 = Tensor([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]])
        b1 = Tensor([0.0, 0.0])
        w2 = Tensor(np.eye(2))
        b2 = Tensor([0.0, 0.0])
        out = mlp2(Tensor([1.0, -2.0, 5.0, 5.0]), w1, b1, w2, b2)
        np.testing.assert_allclose(out.data, [1.0, 0.0])


def brute_force_attention(q, k, v):
    d = q.shape[1]
    out = np.zeros((q.shape[0], v.shape[1]))
    for i in range(q.shape[0]):
        scores = [sum(q[i, x] * k[j, x] for x in range(d)) / math.sqrt(d)
                  for j in range(k.shape[0])]
        m = max(scores)
        weights = [math.exp(s - m) for s in scores]
        total = sum(weights)
        for j in range(k.shape[0]):
            out[i] += (weights[j] / total) * v[j]
    return out


class TestAttention:
    def test_zero_queries_give_column_mean(self):
        rng = np.random.default_rng(3)
        v = rng.normal(size=(5, 4))
        out = attention(Tensor(np.zeros((2, 4))), Tensor(rng.normal(size=(5, 4))), Tensor(v))
        np.testing.assert_allclose(out.data, np.tile(v.mean(axis=0), (2, 1)), rtol=1e-5, atol=1e-6)

    def test_single_key_returns_that_row(self):
        rng = np.random.default_rng(4)
        v = rng.normal(size=(1, 4))
        out = attention(Tensor(rng.normal(size=(3, 4))), Tensor(rng.normal(size=(1, 4))), Tensor(v))
        np.testing.assert_allclose(out.data, np.tile(v[0], (3, 1)), rtol=1e-6)

    def test_random_case_matches_brute_force(self):
        rng = np.random.default_rng(5)
        q = rng.normal(size=(3, 4))
        k = rng.normal(size=(6, 4))
        v = rng.normal(size=(6, 4))
        got = attention(Tensor(q), Tensor(k), Tensor(v)).data
        np.testing.assert_allclose(got, brute_force_attention(q, k, v), rtol=1e-6)

    def test_softmax_weights_rows_sum_to_one(self):
        rng = np.random.default_rng(6)
        _, weights = attention(
            Tensor(rng.normal(size=(7, 8))),
            Tensor(rng.normal(size=(9, 8))),
            Tensor(rng.normal(size=(9, 8))),
            return_weights=True,
        )
        np.testing.assert_allclose(weights.data.sum(axis=1), np.ones(7), atol=1e-6)


class TestBackward:
    def test_sum_gradient_is_ones(self):
        x = t64(np.arange(5.0))
        with Tape() as tape:
            loss = ad.tensor_sum(x)
            backward(tape, loss)
        np.testing.assert_array_equal(x.grad, np.ones(5))

    def test_unit_norm_squared_gradient_vanishes(self):
        x = t64([1.0, -2.0, 0.5])
        with Tape() as tape:
            y = l2norm(x)
            loss = ad.tensor_sum(ad.mul(y, y))
            backward(tape, loss)
        np.testing.assert_allclose(x.grad, np.zeros(3), atol=1e-9)

    def test_disconnected_parameter_warns_and_zeroes(self):
        x = t64([1.0, 2.0], name="used")
        orphan = t64([3.0], name="orphan")
        with Tape() as tape:
            loss = ad.tensor_sum(x)
            with pytest.warns(DisconnectedParameter):
                backward(tape, loss, params=[x, orphan])
        np.testing.assert_array_equal(orphan.grad, [0.0])

    def test_gradients_accumulate_across_tapes(self):
        x = t64([1.0, 1.0])
        for _ in range(3):
            with Tape() as tape:
                loss = ad.tensor_sum(ad.mul(x, x))
                backward(tape, loss)
        np.testing.assert_allclose(x.grad, 3 * 2 * x.data)

    def test_loss_must_be_scalar(self):
        x = t64([1.0, 2.0])
        with Tape() as tape:
            y = ad.mul(x, x)
            with pytest.raises(ShapeMismatch):
                backward(tape, y)


def _op_cases(rng):
    """One scalar-loss closure per differentiable op, inputs away from kinks.

    Every random constant is drawn up front: the closures must define one
    fixed function so finite differences probe the same loss each call.
    """

    def away(x, gap=0.2):
        return x + np.sign(x) * gap

    a = t64(away(rng.normal(size=(3, 4))))
    b = t64(away(rng.normal(size=(3, 4))))
    vec = t64(away(rng.normal(size=6)))
    pos = t64(rng.uniform(0.5, 2.0, size=(3, 4)))
    w = t64(rng.normal(size=(2, 6)))
    bias = t64(rng.normal(size=2))
    gamma = t64(rng.uniform(0.5, 1.5, size=4))
    beta = t64(rng.normal(size=4))
    proj = Tensor(rng.normal(size=(3, 4)))
    projv = Tensor(rng.normal(size=6))
    proj33 = Tensor(rng.normal(size=(3, 3)))
    proj31 = Tensor(rng.normal(size=(3, 1)))
    proj64 = Tensor(rng.normal(size=(6, 4)))
    proj26 = Tensor(rng.normal(size=(2, 6)))
    proj24 = Tensor(rng.normal(size=(2, 4)))
    proj32 = Tensor(rng.normal(size=(3, 2)))
    proj322 = Tensor(rng.normal(size=(3, 2, 2)))
    proj2 = Tensor(rng.normal(size=2))

    cases = {
        "add": ({"a": a, "b": b}, lambda: ad.tensor_sum(ad.mul(ad.add(a, b), proj))),
        "sub": ({"a": a, "b": b}, lambda: ad.tensor_sum(ad.mul(ad.sub(a, b), proj))),
        "mul": ({"a": a, "b": b}, lambda: ad.tensor_sum(ad.mul(ad.mul(a, b), proj))),
        "div": ({"a": a, "b": pos}, lambda: ad.tensor_sum(ad.mul(ad.div(a, pos), proj))),
        "matmul": (
            {"a": a, "b": b},
            lambda: ad.tensor_sum(ad.mul(ad.matmul(a, ad.transpose(b)), proj33)),
        ),
        "relu": ({"a": a}, lambda: ad.tensor_sum(ad.mul(ad.relu(a), proj))),
        "exp": ({"a": a}, lambda: ad.tensor_sum(ad.mul(ad.exp(a), proj))),
        "log": ({"p": pos}, lambda: ad.tensor_sum(ad.mul(ad.log(pos), proj))),
        "sqrt": ({"p": pos}, lambda: ad.tensor_sum(ad.mul(ad.sqrt(pos), proj))),
        "sum_axis": (
            {"a": a},
            lambda: ad.tensor_sum(ad.mul(ad.tensor_sum(a, axis=1, keepdims=True), proj31)),
        ),
        "mean": ({"a": a}, lambda: ad.mean(ad.mul(a, a))),
        "concat": (
            {"a": a, "b": b},
            lambda: ad.tensor_sum(ad.mul(ad.concat([a, b], axis=0), proj64)),
        ),
        "stack_rows": (
            {"vec": vec},
            lambda: ad.tensor_sum(ad.mul(ad.stack_rows([vec, vec]), proj26)),
        ),
        "row_index_slice": (
            {"a": a},
            lambda: ad.add(
                ad.index(ad.row(a, 1), 2),
                ad.tensor_sum(ad.mul(ad.slice_rows(a, 0, 2), proj24)),
            ),
        ),
        "slice_cols": (
            {"a": a},
            lambda: ad.tensor_sum(ad.mul(ad.slice_cols(a, 1, 3), proj32)),
        ),
        "reshape_permute": (
            {"a": a},
            lambda: ad.tensor_sum(
                ad.mul(ad.permute(ad.reshape(a, (2, 2, 3)), (2, 0, 1)), proj322)
            ),
        ),
        "softmax": ({"a": a}, lambda: ad.tensor_sum(ad.mul(softmax_rows(a), proj))),
        "l2norm": ({"vec": vec}, lambda: ad.tensor_sum(ad.mul(l2norm(vec), projv))),
        "linear": (
            {"vec": vec, "w": w, "bias": bias},
            lambda: ad.tensor_sum(ad.mul(linear(vec, w, bias), proj2)),
        ),
        "attention": (
            {"a": a, "b": b},
            lambda: ad.tensor_sum(ad.mul(attention(a, b, b), proj)),
        ),
        "layer_norm": (
            {"a": a, "g": gamma, "beta": beta},
            lambda: ad.tensor_sum(ad.mul(layer_norm(a, gamma, beta), proj)),
        ),
        "cross_entropy": ({"vec": vec}, lambda: cross_entropy_logits(vec, 2)),
    }
    return cases


@pytest.mark.parametrize("seed", range(20))
def test_every_op_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    for name, (params, build) in _op_cases(rng).items():
        err, _ = grad_check(build, params, h=1e-6)
        assert err <= 1e-4, f"op {name} seed {seed}: max rel err {err:.2e}"


class TestDeterminism:
    def test_bitwise_identical_reruns(self):
        def run():
            rng = np.random.default_rng(42)
            q = Tensor(rng.normal(size=(6, 8)).astype(np.float32))
            k = Tensor(rng.normal(size=(9, 8)).astype(np.float32))
            v = Tensor(rng.normal(size=(9, 8)).astype(np.float32))
            return attention(q, k, v).data.tobytes()

        assert run() == run()


class TestAdamW:
    def test_zero_grads_no_decay_leaves_params(self):
        p = Tensor(np.ones(4), requires_grad=True)
        opt = AdamW({"p": p}, lr=0.1, weight_decay=0.0)
        p.grad = np.zeros(4)
        before = p.data.copy()
        opt.step()
        np.testing.assert_array_equal(p.data, before)

    def test_lr_zero_leaves_params(self):
        p = Tensor(np.ones(4), requires_grad=True)
        opt = AdamW({"p": p}, lr=0.0, weight_decay=0.01)
        p.grad = np.full(4, 0.3)
        before = p.data.copy()
        opt.step()
        np.testing.assert_array_equal(p.data, before)

    def test_single_step_matches_scripted_reference(self):
        rng = np.random.default_rng(9)
        theta = rng.normal(size=6).astype(np.float64)
        g = rng.normal(size=6).astype(np.float64)
        lr, b1, b2, eps, wd = 1e-2, 0.9, 0.999, 1e-8, 0.05

        # scripted one-step reference
        m = (1 - b1) * g
        v = (1 - b2) * g * g
        mhat = m / (1 - b1)
        vhat = v / (1 - b2)
        expected = theta - lr * (mhat / (np.sqrt(vhat) + eps) + wd * theta)

        p = Tensor(theta.copy(), requires_grad=True)
        opt = AdamW({"p": p}, lr=lr, betas=(b1, b2), eps=eps, weight_decay=wd)
        p.grad = g.copy()
        opt.step()
        np.testing.assert_allclose(p.data, expected, rtol=1e-12)

    def test_functional_entrypoint_with_explicit_grads(self):
        from treeprompt.optim import AdamWState

        p = Tensor(np.ones(3), requires_grad=True)
        state = AdamWState(lr=0.1)
        state.m["p"] = np.zeros(3)
        state.v["p"] = np.zeros(3)
        adamw_step(state, {"p": p}, grads={"p": np.ones(3)})
        assert not np.array_equal(p.data, np.ones(3))


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(12)
        tensors = {
            "alpha.w": Tensor(rng.normal(size=(3, 5)).astype(np.float32)),
            "beta": Tensor(rng.normal(size=7).astype(np.float32)),
        }
        path = tmp_path / "params.tpck"
        manifest = save_checkpoint(path, tensors)
        loaded = load_checkpoint(path)
        assert set(loaded) == set(tensors)
        for name, t in tensors.items():
            np.testing.assert_array_equal(loaded[name], t.data)
        assert manifest["sha256"] == checkpoint_hash(path)
        assert (tmp_path / "params.tpck.manifest.json").exists()

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.tpck"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(CheckpointError):
            load_checkpoint(path)
