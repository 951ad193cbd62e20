"""Central finite-difference verification of every differentiable primitive
plus a tiny end-to-end generator + loss.

Each check builds f64 inputs, contracts the op output against a fixed random
projection to get a scalar, and compares the taped gradients with central
differences (eps = 1e-5). Errors are reported relative to the largest
finite-difference magnitude in the tensor being checked.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .model import Generator, Mode, SCSNetConfig
from .nn import parameter_map
from .seeding import derive_rng
from .training import SurrogateFeatureNet, content_loss, perceptual_loss

EPS = 1e-5
OP_TOL = 1e-6
END_TO_END_TOL = 1e-4


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    tol: float

    @property
    def passed(self):
        return self.max_rel_err < self.tol


def relative_error(analytic, numeric):
    scale = max(np.max(np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def numeric_gradient(fn, arrays, which, eps=EPS):
    """Central differences of scalar ``fn(arrays)`` w.r.t. arrays[which]."""
    base = [a.copy() for a in arrays]
    grad = np.zeros_like(base[which])
    flat = grad.reshape(-1)
    target = base[which].reshape(-1)
    for i in range(flat.size):
        orig = target[i]
        target[i] = orig + eps
        hi = fn(base)
        target[i] = orig - eps
        lo = fn(base)
        target[i] = orig
        flat[i] = (hi - lo) / (2 * eps)
    return grad


def _check_op(name, make_inputs, apply_op, seeds, corrupt=None):
    """Compare taped gradients of sum(op * R) against finite differences."""
    worst = 0.0
    for seed in seeds:
        rng = derive_rng(seed, "gc", name)
        arrays = make_inputs(rng)
        with Tape():
            tensors = [Tensor(a, requires_grad=True, dtype=np.float64) for a in arrays]
            out = apply_op(tensors)
            proj = rng.standard_normal(out.shape)
            loss = ad.reduce_sum(out * proj)
            loss.backward()

        def scalar(arrs):
            outs = apply_op([Tensor(a, dtype=np.float64) for a in arrs])
            return float(np.sum(outs.data * proj))

        for i, t in enumerate(tensors):
            analytic = t.grad if t.grad is not None else np.zeros_like(arrays[i])
            if corrupt == name:
                analytic = analytic * 1.01 + 1e-3
            numeric = numeric_gradient(scalar, arrays, i)
            worst = max(worst, relative_error(analytic, numeric))
    return CheckResult(name, worst, OP_TOL)


def _away_from_zero(rng, shape, low=0.2, high=1.5):
    # keeps |x| >= low so the subgradient points of abs/leaky stay untouched
    sign = np.where(rng.random(shape) < 0.5, -1.0, 1.0)
    return sign * rng.uniform(low, high, shape)


def op_checks(seeds, corrupt=None):
    """Run the primitive suite; returns one result per op."""
    s = list(seeds)
    checks = [
        (
            "conv2d_s1",
            lambda r: [r.standard_normal((1, 2, 5, 5)), r.standard_normal((3, 2, 3, 3)), r.standard_normal(3)],
            lambda t: ad.conv2d(t[0], t[1], t[2], stride=1, padding=1),
        ),
        (
            "conv2d_s2",
            lambda r: [r.standard_normal((2, 3, 6, 6)), r.standard_normal((4, 3, 3, 3)), r.standard_normal(4)],
            lambda t: ad.conv2d(t[0], t[1], t[2], stride=2, padding=1),
        ),
        (
            "conv2d_1x1",
            lambda r: [r.standard_normal((1, 4, 4, 4)), r.standard_normal((2, 4, 1, 1)), r.standard_normal(2)],
            lambda t: ad.conv2d(t[0], t[1], t[2]),
        ),
        (
            "linear",
            lambda r: [r.standard_normal((3, 4)), r.standard_normal((5, 4)), r.standard_normal(5)],
            lambda t: ad.linear(t[0], t[1], t[2]),
        ),
        (
            "linear_batched",
            lambda r: [r.standard_normal((2, 3, 4)), r.standard_normal((6, 4)), r.standard_normal(6)],
            lambda t: ad.linear(t[0], t[1], t[2]),
        ),
        ("softmax", lambda r: [r.standard_normal((3, 5))], lambda t: ad.softmax(t[0], axis=1)),
        (
            "softmax_axis0",
            lambda r: [r.standard_normal((4, 3, 2))],
            lambda t: ad.softmax(t[0], axis=0),
        ),
        (
            "bilinear_up",
            lambda r: [r.standard_normal((1, 2, 4, 5))],
            lambda t: ad.bilinear_resize(t[0], 7, 9),
        ),
        (
            "bilinear_down",
            lambda r: [r.standard_normal((1, 2, 6, 6))],
            lambda t: ad.bilinear_resize(t[0], 3, 4),
        ),
        (
            "add_broadcast",
            lambda r: [r.standard_normal((3, 4)), r.standard_normal((1, 4))],
            lambda t: t[0] + t[1],
        ),
        ("sub", lambda r: [r.standard_normal((2, 3)), r.standard_normal((2, 3))], lambda t: t[0] - t[1]),
        (
            "mul_broadcast",
            lambda r: [r.standard_normal((2, 3, 4)), r.standard_normal((3, 1))],
            lambda t: t[0] * t[1],
        ),
        ("square", lambda r: [r.standard_normal((3, 3))], lambda t: ad.square(t[0])),
        ("sigmoid", lambda r: [r.standard_normal((4, 4))], lambda t: ad.sigmoid(t[0])),
        (
            "leaky_relu",
            lambda r: [_away_from_zero(r, (4, 4))],
            lambda t: ad.leaky_relu(t[0]),
        ),
        ("abs_mean", lambda r: [_away_from_zero(r, (3, 5))], lambda t: ad.abs_mean(t[0])),
        (
            "reduce_mean_axis",
            lambda r: [r.standard_normal((2, 3, 4))],
            lambda t: ad.reduce_mean(t[0], axis=(0, 2)),
        ),
        ("reduce_sum", lambda r: [r.standard_normal((2, 5))], lambda t: ad.reduce_sum(t[0])),
        (
            "reshape_transpose",
            lambda r: [r.standard_normal((2, 3, 4))],
            lambda t: ad.reshape(ad.transpose(t[0], (2, 0, 1)), (4, 6)),
        ),
        (
            "matmul",
            lambda r: [r.standard_normal((2, 3, 4)), r.standard_normal((2, 4, 5))],
            lambda t: ad.matmul(t[0], t[1]),
        ),
        (
            "concat_channels",
            lambda r: [r.standard_normal((1, 2, 3, 3)), r.standard_normal((1, 4, 3, 3))],
            lambda t: ad.concat_channels(t),
        ),
        (
            "slice_channels",
            lambda r: [r.standard_normal((1, 6, 3, 3))],
            lambda t: ad.slice_channels(t[0], 1, 4),
        ),
        ("avg_pool2x2", lambda r: [r.standard_normal((1, 2, 6, 6))], lambda t: ad.avg_pool2x2(t[0])),
    ]
    return [_check_op(name, mk, op, s, corrupt) for name, mk, op in checks]


def tiny_generator_check(seeds, n_entries=30, corrupt=None):
    """Whole generator + content/perceptual loss vs finite differences.

    Perturbs ``n_entries`` randomly chosen parameter entries per seed.
    """
    cfg = SCSNetConfig(
        base_channels=8,
        deep_channels=16,
        attn_qk_channels=2,
        pyramid_levels=2,
        sr_blocks=1,
        cpm_hidden=16,
        input_size=8,
    )
    worst = 0.0
    for seed in seeds:
        rng = derive_rng(seed, "gc-e2e")
        gen = Generator(cfg, seed=seed, dtype=np.float64)
        surrogate = SurrogateFeatureNet(seed=seed, dtype=np.float64)
        params = parameter_map(gen)
        src = rng.uniform(0, 1, (1, 1, 8, 8))
        ref = rng.uniform(-1, 1, (1, 3, 8, 8))
        tgt = rng.uniform(-1, 1, (1, 3, 16, 16))

        def loss_value():
            pred = gen(Tensor(src, dtype=np.float64), Tensor(ref, dtype=np.float64), Mode.REF, 2.0)
            l_c = content_loss(pred, Tensor(tgt, dtype=np.float64))
            l_p = perceptual_loss(pred, Tensor(tgt, dtype=np.float64), surrogate)
            return l_c + l_p * 0.5

        with Tape():
            loss = loss_value()
            loss.backward()
        grads = {name: (p.grad.copy() if p.grad is not None else None) for name, p in params.items()}

        names = sorted(params)
        picks = rng.choice(len(names), size=n_entries, replace=True)
        for pick in picks:
            name = names[pick]
            p = params[name]
            flat_idx = int(rng.integers(p.data.size))
            orig = p.data.reshape(-1)[flat_idx]
            idx = np.unravel_index(flat_idx, p.data.shape)

            def eval_at(value):
                arr = p.data.copy()
                arr[idx] = value
                old = p.data
                p.data = arr
                out = float(loss_value().item())
                p.data = old
                return out

            numeric = (eval_at(orig + EPS) - eval_at(orig - EPS)) / (2 * EPS)
            analytic = 0.0 if grads[name] is None else float(grads[name][idx])
            if corrupt == "end_to_end":
                analytic = analytic * 1.01 + 1e-3
            err = abs(analytic - numeric) / max(abs(numeric), 1e-6)
            worst = max(worst, err)
    return CheckResult("end_to_end", worst, END_TO_END_TOL)


def run_suite(seed=0, op_seeds=20, e2e_seeds=20, corrupt=None):
    """Full verification suite; returns a list of CheckResults."""
    base = int(seed)
    results = op_checks(range(base, base + op_seeds), corrupt=corrupt)
    results.append(
        tiny_generator_check(range(base, base + e2e_seeds), corrupt=corrupt)
    )
    return results


def format_results(results):
    lines = [f"{'op':<20} {'max rel err':>12} {'tol':>9}  status"]
    for r in results:
        status = "ok" if r.passed else "FAIL"
        lines.append(f"{r.name:<20} {r.max_rel_err:>12.3e} {r.tol:>9.0e}  {status}")
    return "\n".join(lines)
