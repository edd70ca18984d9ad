"""Self-check harness: gradient checks, exact module reductions, formula and
metric oracles. Each check yields one ledger row with the measured value and
the tolerance it was held to.

Checks look up ``ops.<name>`` at call time, so a patched operation is picked
up by its own gradient check.
"""

from __future__ import annotations

import json
import math
import tempfile
import zlib
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .. import data as D
from .. import metrics as M
from ..data.index import SPLITS
from ..model import (
    FFN, GLI, MSRA, Attention, EatBlock, EATFormer, MdMsa, ModelConfig, TaskHead, WomMixer, flatten_map,
    gli_param_count, unflatten_tokens, wom_weights,
)
from ..model.layers import Module
from ..tensor import Parameter, Tape, Tensor, grad_check, grad_check_params, ops

ELEMENTWISE_TOL = 1e-5
COMPOSITE_TOL = 1e-4
REDUCTION_TOL = 1e-12


@dataclass
class CheckResult:
    name: str
    module: str
    passed: bool
    measured: float | None
    tolerance: float | None
    detail: str = ""


@dataclass
class Ledger:
    seed: int
    checks: list[CheckResult]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list[CheckResult]:
        return [c for c in self.checks if not c.passed]

    def max_error_by_module(self) -> dict[str, float]:
        """Largest measured gradient-check error per module."""
        out: dict[str, float] = {}
        for c in self.checks:
            if "gradcheck" in c.name and c.measured is not None:
                out[c.module] = max(out.get(c.module, 0.0), c.measured)
        return out

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "passed": self.passed,
            "num_checks": len(self.checks),
            "num_failed": len(self.failures()),
            "max_gradcheck_error": self.max_error_by_module(),
            "checks": [asdict(c) for c in self.checks],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    def to_text(self) -> str:
        width = max([len(c.name) for c in self.checks] + [5])
        lines = []
        for c in self.checks:
            m = "-" if c.measured is None else f"{c.measured:.3e}"
            t = "report" if c.tolerance is None else f"{c.tolerance:.0e}"
            lines.append(f"{'PASS' if c.passed else 'FAIL'}  {c.name:<{width}}  {c.module:<13} {m:>10} / {t:<7} {c.detail}")
        for module, err in sorted(self.max_error_by_module().items()):
            lines.append(f"max gradient error [{module}]: {err:.3e}")
        lines.append(f"{len(self.checks) - len(self.failures())}/{len(self.checks)} checks passed")
        return "\n".join(lines)


@dataclass
class _Check:
    name: str
    module: str
    tolerance: float | None
    fn: Callable


_REGISTRY: list[_Check] = []


def check(name: str, module: str, tolerance: float | None):
    """Register a check. ``fn(rng, config)`` returns the measured value, or
    (value, detail). Pass means value < tolerance, value == 0 when the
    tolerance is 0, and always when the tolerance is None (report only)."""

    def wrap(fn):
        _REGISTRY.append(_Check(name, module, tolerance, fn))
        return fn

    return wrap


def check_names() -> list[str]:
    return [c.name for c in _REGISTRY]


# ----------------------------------------------------------------- helpers

def randomize(module: Module, rng: np.random.Generator, scale: float = 0.3) -> Module:
    """Perturb every parameter so zero-initialized branches become active."""
    for _, p in module.named_parameters():
        p.data = p.data + rng.normal(0.0, scale, size=p.shape)
    return module


def _weighted_sum(out: Tensor, weights: np.ndarray) -> Tensor:
    return ops.sum(ops.mul(out, Tensor(weights)))


def _op_check(rng, build: Callable, trials: int = 5, h: float = 1e-5) -> float:
    """Worst grad_check error over ``trials`` draws.

    ``build(rng)`` returns a list of (f, x): ``f`` maps the checked input
    (others held fixed inside) to the op output, ``x`` is its base value.
    """
    worst = 0.0
    for _ in range(trials):
        for f, x in build(rng):
            probe = f(Tensor(x))
            weights = rng.normal(size=probe.shape)
            err = grad_check(lambda t, f=f, weights=weights: _weighted_sum(f(t), weights), x, h=h)
            worst = max(worst, err)
    return worst


def _off_grid(rng, size, lo, hi):
    """Coordinates at least 0.1 from any integer."""
    return rng.integers(lo, hi, size=size) + rng.uniform(0.1, 0.9, size=size)


def _max_abs(a, b) -> float:
    a = a.data if isinstance(a, Tensor) else np.asarray(a)
    b = b.data if isinstance(b, Tensor) else np.asarray(b)
    if a.shape != b.shape:
        return math.inf
    return float(np.max(np.abs(a - b))) if a.size else 0.0


def model_grad_check(config: ModelConfig, seed: int = 0, hw: int = 32, coords_per_param: int = 2,
                     h: float = 1e-4, input_coords: int = 8) -> tuple[float, dict[str, float]]:
    """Backbone + head + cross-entropy gradient check on one random image.

    Parameters are randomized first so zero-initialized projections carry
    gradient. Returns (max error, per-tensor errors; the input is "input").
    """
    rng = np.random.default_rng([seed, 11])
    model = randomize(EATFormer(config, rng), rng, 0.2)
    image = rng.normal(size=(1, config.in_channels, hw, hw))
    label = np.array([int(rng.integers(config.num_classes))])
    errors = grad_check_params(lambda: ops.cross_entropy(model(Tensor(image)), label), model.parameters(), h=h,
                               coords_per_param=coords_per_param, rng=rng)
    errors["input"] = grad_check(lambda t: ops.cross_entropy(model(t), label), image, h=h,
                                 coords=input_coords, rng=rng)
    return max(errors.values()), errors


# --------------------------------------------------------- tensor-core ops

@check("gradcheck.add", "tensor-core", ELEMENTWISE_TOL)
def _(rng, cfg):
    def build(r):
        a, b = r.normal(size=(3, 4)), r.normal(size=(4,))
        return [(lambda t: ops.add(t, Tensor(b)), a), (lambda t: ops.add(Tensor(a), t), b)]
    return _op_check(rng, build)


@check("gradcheck.sub", "tensor-core", ELEMENTWISE_TOL)
def _(rng, cfg):
    def build(r):
        a, b = r.normal(size=(2, 3)), r.normal(size=(2, 1))
        return [(lambda t: ops.sub(t, Tensor(b)), a), (lambda t: ops.sub(Tensor(a), t), b)]
    return _op_check(rng, build)


@check("gradcheck.mul", "tensor-core", ELEMENTWISE_TOL)
def _(rng, cfg):
    def build(r):
        a, b = r.normal(size=(3, 4)), r.normal(size=(3, 4))
        return [(lambda t: ops.mul(t, Tensor(b)), a), (lambda t: ops.mul(Tensor(a), t), b)]
    return _op_check(rng, build)


@check("gradcheck.div", "tensor-core", ELEMENTWISE_TOL)
def _(rng, cfg):
    def build(r):
        a = r.normal(size=(3, 4))
        b = r.uniform(0.5, 2.0, size=(3, 4)) * r.choice([-1.0, 1.0], size=(3, 4))
        return [(lambda t: ops.div(t, Tensor(b)), a), (lambda t: ops.div(Tensor(a), t), b)]
    return _op_check(rng, build)


@check("gradcheck.matmul", "tensor-core", ELEMENTWISE_TOL)
def _(rng, cfg):
    def build(r):
        a, b = r.normal(size=(2, 3, 4)), r.normal(size=(2, 4, 5))
        return [(lambda t: ops.matmul(t, Tensor(b)), a), (lambda t: ops.matmul(Tensor(a), t), b)]
    return _op_check(rng, build)


@check("gradcheck.transpose", "tensor-core", ELEMENTWISE_TOL)
def _(rng, cfg):
    return _op_check(rng, lambda r: [(lambda t: ops.transpose(ops.reshape(t, (4, 3, 2)), (2, 0, 1)),
                                      r.normal(size=(2, 12)))])


@check("gradcheck.getitem", "tensor-core", ELEMENTWISE_TOL)
def _(rng, cfg):
    idx = np.array([0, 2, 2, 1])
    return _op_check(rng, lambda r: [(lambda t: ops.getitem(t, (slice(None), 1)), r.normal(size=(3, 4))),
                                     (lambda t: ops.getitem(t, idx), r.normal(size=(3, 4)))])


@check("gradcheck.concat_channels", "tensor-core", ELEMENTWISE_TOL)
def _(rng, cfg):
    def build(r):
        a, b = r.normal(size=(2, 3, 2, 2)), r.normal(size=(2, 1, 2, 2))
        return [(lambda t: ops.concat_channels([t, Tensor(b)]), a),
                (lambda t: ops.concat_channels([Tensor(a), t]), b)]
    return _op_check(rng, build)


@check("gradcheck.split_channels", "tensor-core", ELEMENTWISE_TOL)
def _(rng, cfg):
    def f(t):
        a, b = ops.split_channels(t, [2, 3])
        return ops.concat_channels([ops.mul(b, b), a])
    return _op_check(rng, lambda r: [(f, r.normal(size=(2, 5, 2, 3)))])


@check("gradcheck.sum", "tensor-core", ELEMENTWISE_TOL)
def _(rng, cfg):
    return _op_check(rng, lambda r: [(lambda t: ops.sum(t, axis=1, keepdims=True), r.normal(size=(3, 4, 2)))])


@check("gradcheck.mean", "tensor-core", ELEMENTWISE_TOL)
def _(rng, cfg):
    return _op_check(rng, lambda r: [(lambda t: ops.mean(t, axis=(0, 2)), r.normal(size=(3, 4, 2)))])


@check("gradcheck.mean_pool_spatial", "tensor-core", ELEMENTWISE_TOL)
def _(rng, cfg):
    return _op_check(rng, lambda r: [(ops.mean_pool_spatial, r.normal(size=(2, 3, 4, 5)))])


@check("gradcheck.sigmoid", "tensor-core", ELEMENTWISE_TOL)
def _(rng, cfg):
    return _op_check(rng, lambda r: [(ops.sigmoid, r.normal(scale=3.0, size=(4, 5)))])


@check("gradcheck.gelu", "tensor-core", ELEMENTWISE_TOL)
def _(rng, cfg):
    return _op_check(rng, lambda r: [(ops.gelu, r.normal(scale=2.0, size=(4, 5)))])


@check("gradcheck.softmax", "tensor-core", ELEMENTWISE_TOL)
def _(rng, cfg):
    return _op_check(rng, lambda r: [(lambda t: ops.softmax(t, axis=-1), r.normal(scale=2.0, size=(3, 5))),
                                     (lambda t: ops.softmax(t, axis=0), r.normal(scale=2.0, size=(3, 5)))])


@check("gradcheck.layer_norm", "tensor-core", ELEMENTWISE_TOL)
def _(rng, cfg):
    def build(r):
        x = r.normal(size=(2, 4, 3, 3))
        g, b = r.normal(size=4), r.normal(size=4)
        return [
            (lambda t: ops.layer_norm(t, Tensor(g), Tensor(b), axis=1), x),
            (lambda t: ops.layer_norm(Tensor(x), t, Tensor(b), axis=1), g),
            (lambda t: ops.layer_norm(Tensor(x), Tensor(g), t, axis=1), b),
            (lambda t: ops.layer_norm(t, Tensor(g), Tensor(b), axis=-1), r.normal(size=(3, 4))),
        ]
    return _op_check(rng, build)


@check("gradcheck.linear", "tensor-core", ELEMENTWISE_TOL)
def _(rng, cfg):
    def build(r):
        x, w, b = r.normal(size=(2, 3, 4)), r.normal(size=(5, 4)), r.normal(size=5)
        return [(lambda t: ops.linear(t, Tensor(w), Tensor(b)), x),
                (lambda t: ops.linear(Tensor(x), t, Tensor(b)), w),
                (lambda t: ops.linear(Tensor(x), Tensor(w), t), b)]
    return _op_check(rng, build)


@check("gradcheck.cross_entropy", "tensor-core", ELEMENTWISE_TOL)
def _(rng, cfg):
    def build(r):
        labels = r.integers(0, 4, size=5)
        return [(lambda t: ops.cross_entropy(t, labels), r.normal(scale=2.0, size=(5, 4)))]
    return _op_check(rng, build)


@check("gradcheck.conv2d", "tensor-core", ELEMENTWISE_TOL)
def _(rng, cfg):
    # (C, O, k, stride, padding, dilation, groups): dense, grouped+dilated, depthwise strided
    variants = [(3, 4, 3, 2, 1, 1, 1), (4, 6, 3, 1, 2, 2, 2), (4, 4, 3, 2, 1, 1, 4)]

    def build(r):
        out = []
        for c, o, k, s, p, d, g in variants:
            x = r.normal(size=(2, c, 7, 6))
            w = r.normal(size=(o, c // g, k, k))
            b = r.normal(size=o)
            kw = dict(stride=s, padding=p, dilation=d, groups=g)
            out += [(lambda t, w=w, b=b, kw=kw: ops.conv2d(t, Tensor(w), Tensor(b), **kw), x),
                    (lambda t, x=x, b=b, kw=kw: ops.conv2d(Tensor(x), t, Tensor(b), **kw), w),
                    (lambda t, x=x, w=w, kw=kw: ops.conv2d(Tensor(x), Tensor(w), t, **kw), b)]
        return out
    return _op_check(rng, build)


@check("gradcheck.bilinear_sample", "tensor-core", ELEMENTWISE_TOL)
def _(rng, cfg):
    def build(r):
        fmap = r.normal(size=(2, 3, 4, 5))
        ys = _off_grid(r, (2, 6), -2, 5)
        xs = _off_grid(r, (2, 6), -2, 6)
        return [(lambda t: ops.sample_bilinear(t, Tensor(ys), Tensor(xs)), fmap),
                (lambda t: ops.sample_bilinear(Tensor(fmap), t, Tensor(xs)), ys),
                (lambda t: ops.sample_bilinear(Tensor(fmap), Tensor(ys), t), xs)]
    return _op_check(rng, build)


@check("tensor.softmax_sums_to_one", "tensor-core", REDUCTION_TOL)
def _(rng, cfg):
    worst = 0.0
    for mag in (1.0, 10.0, 100.0, 1000.0):
        x = rng.uniform(-mag, mag, size=(50, 7))
        worst = max(worst, float(np.max(np.abs(ops.softmax(Tensor(x)).data.sum(axis=-1) - 1.0))))
    return worst


@check("tensor.depthwise_identity_conv", "tensor-core", 0.0)
def _(rng, cfg):
    x = rng.normal(size=(2, 5, 6, 7))
    return _max_abs(ops.conv2d(Tensor(x), Tensor(np.ones((5, 1, 1, 1))), groups=5), x)


@check("tensor.identity_chain_grad", "tensor-core", 0.0)
def _(rng, cfg):
    x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    with Tape() as tape:
        y = x
        for _ in range(10):
            y = ops.reshape(y, y.shape)
        loss = ops.sum(y)
    tape.backward(loss)
    return _max_abs(x.grad, np.ones((3, 4)))


@check("tensor.deterministic", "tensor-core", 0.0)
def _(rng, cfg):
    x = rng.normal(size=(1, 4, 6, 6))
    w = rng.normal(size=(4, 1, 3, 3))

    def run():
        t = Tensor(x, requires_grad=True)
        with Tape() as tape:
            out = ops.sum(ops.gelu(ops.conv2d(t, Tensor(w), padding=1, groups=4)))
        tape.backward(out)
        return out.data, t.grad

    (o1, g1), (o2, g2) = run(), run()
    return _max_abs(o1, o2) + _max_abs(g1, g2)


# ----------------------------------------------------------------- blocks

@check("wom.sums_to_one", "eat-blocks", REDUCTION_TOL)
def _(rng, cfg):
    worst = 0.0
    for n in (1, 2, 3, 5):
        for scale in (0.1, 1.0, 10.0, 100.0):
            w = wom_weights(Tensor(rng.normal(scale=scale, size=n))).data
            worst = max(worst, abs(float(w.sum()) - 1.0))
    return worst


@check("wom.closed_form", "eat-blocks", REDUCTION_TOL)
def _(rng, cfg):
    w = wom_weights(Tensor([math.log(2.0), 0.0])).data
    u = wom_weights(Tensor([0.0, 0.0, 0.0])).data
    return max(_max_abs(w, [2 / 3, 1 / 3]), _max_abs(u, [1 / 3] * 3))


@check("wom.singleton_identity", "eat-blocks", 0.0)
def _(rng, cfg):
    mixer = WomMixer(1)
    mixer.alphas.data = rng.normal(size=1)
    x = rng.normal(size=(2, 3, 4, 4))
    return _max_abs(mixer([Tensor(x)]), x)


@check("msra.zero_proj_identity", "eat-blocks", 0.0)
def _(rng, cfg):
    x = rng.normal(size=(2, 8, 9, 9))
    return _max_abs(MSRA(8, 8, rng, dilations=cfg.msra_dilations)(Tensor(x)), x)


@check("msra.shapes", "eat-blocks", 0.0)
def _(rng, cfg):
    x = Tensor(rng.normal(size=(1, 8, 16, 16)))
    same = MSRA(8, 8, rng, stride=1, dilations=(1, 2, 3))(x).shape
    down = MSRA(8, 12, rng, stride=2, dilations=(1, 2, 3))(x).shape
    return float(same != (1, 8, 16, 16)) + float(down != (1, 12, 8, 8))


@check("msra.gradcheck", "eat-blocks", ELEMENTWISE_TOL)
def _(rng, cfg):
    m = randomize(MSRA(4, 4, rng, dilations=(1, 2, 3)), rng)
    return _op_check(rng, lambda r: [(m, r.normal(size=(2, 4, 6, 6)))])


@check("attention.single_token", "eat-blocks", REDUCTION_TOL)
def _(rng, cfg):
    a = Attention(6, 2, rng, zero_proj=False)
    x = rng.normal(size=(3, 1, 6))
    expected = a.proj(a.v(Tensor(x)))
    return _max_abs(a(Tensor(x)), expected)


@check("attention.identical_tokens", "eat-blocks", REDUCTION_TOL)
def _(rng, cfg):
    a = Attention(6, 2, rng, zero_proj=False)
    x = rng.normal(size=(1, 4, 6))
    x[:, 3] = x[:, 1]
    out = a(Tensor(x)).data
    return _max_abs(out[:, 1], out[:, 3])


@check("attention.permutation_equivariance", "eat-blocks", REDUCTION_TOL)
def _(rng, cfg):
    a = Attention(8, 2, rng, zero_proj=False)
    worst = 0.0
    for _ in range(5):
        x = rng.normal(size=(2, 7, 8))
        perm = rng.permutation(7)
        worst = max(worst, _max_abs(a(Tensor(x[:, perm])).data, a(Tensor(x)).data[:, perm]))
    return worst


@check("attention.gradcheck", "eat-blocks", ELEMENTWISE_TOL)
def _(rng, cfg):
    a = Attention(6, 2, rng, zero_proj=False)
    return _op_check(rng, lambda r: [(a, r.normal(size=(2, 5, 6)))])


def _paired_msa(rng, dim, heads, bypass):
    md = MdMsa(dim, heads, rng, zero_proj=False, modulation_bypass=bypass)
    plain = Attention(dim, heads, rng, zero_proj=False)
    for name in ("q", "k", "v", "proj"):
        setattr(plain, name, getattr(md, name))
    return md, plain


@check("md_msa.reduction", "eat-blocks", REDUCTION_TOL)
def _(rng, cfg):
    md, plain = _paired_msa(rng, 8, 2, bypass=True)
    worst = 0.0
    for _ in range(20):
        shape = (int(rng.integers(1, 3)), 8, int(rng.integers(1, 6)), int(rng.integers(1, 6)))
        x = rng.normal(scale=rng.uniform(0.1, 10.0), size=shape)
        worst = max(worst, _max_abs(md(Tensor(x)), plain(flatten_map(Tensor(x)))))
    return worst


@check("md_msa.half_modulation", "eat-blocks", REDUCTION_TOL)
def _(rng, cfg):
    md, plain = _paired_msa(rng, 6, 3, bypass=False)
    x = Tensor(rng.normal(size=(2, 6, 4, 3)))
    tokens = flatten_map(x)
    expected = plain.attend(plain.q(tokens), tokens * 0.5)
    return _max_abs(md(x), expected)


@check("md_msa.shift_oracle", "eat-blocks", REDUCTION_TOL)
def _(rng, cfg):
    md = MdMsa(4, 1, rng, modulation_bypass=True)
    md.md.bias.data = np.array([1.0, 0.0, 0.0])
    h, w = 5, 4
    x = np.broadcast_to(np.arange(h, dtype=float)[:, None], (h, w)) * rng.uniform(0.5, 2.0, size=(1, 4, 1, 1))
    sampled = unflatten_tokens(md.resample(Tensor(x), md.q(flatten_map(Tensor(x)))), h, w).data
    expected = np.zeros_like(x)
    expected[:, :, :-1] = x[:, :, 1:]
    return _max_abs(sampled, expected)


@check("md_msa.gradcheck", "eat-blocks", ELEMENTWISE_TOL)
def _(rng, cfg):
    # randomized f_md gives non-zero, off-grid offsets
    md = randomize(MdMsa(4, 2, rng, zero_proj=False), rng, 0.3)
    worst = 0.0
    for _ in range(5):
        x = rng.normal(size=(1, 4, 4, 3))
        weights = rng.normal(size=(1, 12, 4))
        worst = max(worst, grad_check(lambda t: _weighted_sum(md(t), weights), x))
        errs = grad_check_params(lambda: _weighted_sum(md(Tensor(x)), weights), md.parameters(), h=1e-5,
                                 coords_per_param=3, rng=rng)
        worst = max(worst, *errs.values())
    return worst


@check("gli.p1_global_only", "eat-blocks", 0.0)
def _(rng, cfg):
    gli = randomize(GLI(8, 2, 1.0, 3, rng), rng)
    x = Tensor(rng.normal(size=(2, 8, 4, 4)))
    expected = x + unflatten_tokens(gli.attn.forward_map(gli.norm(x)), 4, 4)
    return _max_abs(gli(x), expected) + float(gli.local is not None)


@check("gli.p0_local_only", "eat-blocks", 0.0)
def _(rng, cfg):
    gli = randomize(GLI(8, 2, 0.0, 3, rng), rng)
    x = Tensor(rng.normal(size=(2, 8, 4, 4)))
    expected = x + gli.local(gli.norm(x))
    return _max_abs(gli(x), expected) + float(gli.attn is not None)


@check("gli.zero_init_identity", "eat-blocks", 0.0)
def _(rng, cfg):
    x = rng.normal(size=(2, 8, 4, 4))
    return _max_abs(GLI(8, 2, 0.5, 3, rng)(Tensor(x)), x)


@check("gli.gradcheck", "eat-blocks", ELEMENTWISE_TOL)
def _(rng, cfg):
    gli = randomize(GLI(8, 2, 0.5, 3, rng), rng)
    return _op_check(rng, lambda r: [(gli, r.normal(size=(1, 8, 3, 4)))])


@check("ffn.zero_init_identity", "eat-blocks", 0.0)
def _(rng, cfg):
    x = rng.normal(size=(2, 4, 8))
    return _max_abs(FFN(8, 4.0, rng)(Tensor(x)), x)


@check("ffn.gradcheck", "eat-blocks", ELEMENTWISE_TOL)
def _(rng, cfg):
    ffn = randomize(FFN(8, 4.0, rng), rng)
    return _op_check(rng, lambda r: [(ffn, r.normal(size=(2, 4, 8)))])


@check("eat_block.zero_init_identity", "eat-blocks", 0.0)
def _(rng, cfg):
    x = rng.normal(size=(1, 8, 8, 8))
    return _max_abs(EatBlock(8, 2, cfg, rng)(Tensor(x)), x)


@check("eat_block.gradcheck", "eat-blocks", COMPOSITE_TOL)
def _(rng, cfg):
    block = randomize(EatBlock(8, 2, cfg, rng), rng, 0.2)
    return _op_check(rng, lambda r: [(block, r.normal(size=(1, 8, 8, 8)))], trials=1, h=1e-4)


@check("params.formula_examples", "eat-blocks", 0.0)
def _(rng, cfg):
    got = [gli_param_count(64, 32, 3), gli_param_count(64, 0, 3), gli_param_count(1, 1, 1)]
    return float(sum(abs(g - e) for g, e in zip(got, [5600, 4800, 8])))


@check("params.formula_random", "eat-blocks", 0.0)
def _(rng, cfg):
    bad = 0
    for _ in range(50):
        c = int(rng.integers(1, 513))
        cg = int(rng.integers(0, c + 1))
        k = int(rng.choice([1, 3, 5, 7]))
        expanded = 5 * cg**2 + 2 * cg - 2 * c * cg - k**2 * cg + k**2 * c + 2 * c + c**2
        bad += gli_param_count(c, cg, k) != expanded
    return float(bad)


@check("params.gli_census", "eat-blocks", None)
def _(rng, cfg):
    gli = GLI(64, 2, 0.5, 3, rng)
    census = gli.num_parameters()
    return float(census), f"formula(64, 32, 3) = {gli_param_count(64, 32, 3)}, module census = {census}"


@check("backbone.pyramid", "eat-blocks", 0.0)
def _(rng, cfg):
    model = EATFormer(cfg, rng)
    bad = 0
    for hw in (64, 224):
        if hw % cfg.reduction:
            continue
        outs = model.backbone.stages(Tensor(rng.normal(size=(1, cfg.in_channels, hw, hw))))
        expected = [(1, d, hw // (cfg.stem_stride * 2**i), hw // (cfg.stem_stride * 2**i))
                    for i, d in enumerate(cfg.stage_dims)]
        bad += [o.shape for o in outs] != expected
    return float(bad)


@check("backbone.unique_parameters", "eat-blocks", 0.0)
def _(rng, cfg):
    model = EATFormer(cfg, rng)
    named = list(model.named_parameters())
    dup_names = len(named) - len({n for n, _ in named})
    dup_objects = len(named) - len({id(p) for _, p in named})
    return float(dup_names + dup_objects)


@check("backbone.distinct_outputs", "eat-blocks", 0.0)
def _(rng, cfg):
    model = EATFormer(cfg, rng)
    hw = cfg.reduction * 2
    a = model.backbone(Tensor(rng.normal(size=(1, cfg.in_channels, hw, hw)))).data
    b = model.backbone(Tensor(rng.normal(size=(1, cfg.in_channels, hw, hw)))).data
    return float(np.array_equal(a, b))


@check("trh.zero_init_logits", "eat-blocks", 0.0)
def _(rng, cfg):
    head = TaskHead(8, 5, rng)
    return float(np.max(np.abs(head(Tensor(rng.normal(size=(3, 8, 2, 2)))).data)))


@check("trh.constant_features", "eat-blocks", REDUCTION_TOL)
def _(rng, cfg):
    head = randomize(TaskHead(8, 5, rng), rng)
    vec = rng.normal(size=(2, 8, 1, 1))
    attended, pooled = head.fuse(Tensor(np.broadcast_to(vec, (2, 8, 3, 3)).copy()))
    return _max_abs(attended, pooled)


@check("model.gradcheck", "eat-blocks", COMPOSITE_TOL)
def _(rng, cfg):
    err, per = model_grad_check(cfg, seed=int(rng.integers(2**31)), hw=cfg.reduction, coords_per_param=1)
    worst = max(per, key=per.get)
    return err, f"{len(per)} tensors, worst {worst}"


# ---------------------------------------------------------------- metrics

@check("metrics.binary_fixture", "metrics", REDUCTION_TOL)
def _(rng, cfg):
    cm = M.ConfusionMatrix(counts=[[6, 1], [1, 2]])
    rows, _ = M.per_class_prf(cm)
    pos = rows[1]
    got = [M.accuracy(cm), pos.precision, pos.recall, pos.f1, M.mcc(cm)]
    return _max_abs(got, [0.8, 2 / 3, 2 / 3, 2 / 3, 11 / 21])


@check("metrics.perfect_diagonal", "metrics", REDUCTION_TOL)
def _(rng, cfg):
    r = M.report(M.ConfusionMatrix(counts=np.diag(rng.integers(1, 20, size=4))))
    return _max_abs([r.accuracy, r.precision, r.recall, r.f1, r.mcc], [1.0] * 5)


@check("metrics.single_class_mcc", "metrics", 0.0)
def _(rng, cfg):
    counts = np.zeros((3, 3), dtype=int)
    counts[:, 1] = rng.integers(1, 10, size=3)
    return abs(M.mcc(M.ConfusionMatrix(counts=counts)))


@check("metrics.binary_mcc_oracle", "metrics", REDUCTION_TOL)
def _(rng, cfg):
    worst = 0.0
    for _ in range(100):
        (tn, fp), (fn, tp) = rng.integers(0, 30, size=(2, 2))
        den = math.sqrt(float((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)))
        oracle = (tp * tn - fp * fn) / den if den else 0.0
        worst = max(worst, abs(M.mcc(M.ConfusionMatrix(counts=[[tn, fp], [fn, tp]])) - oracle))
    return worst


@check("metrics.relabel_invariance", "metrics", REDUCTION_TOL)
def _(rng, cfg):
    worst = 0.0
    for _ in range(20):
        counts = rng.integers(0, 15, size=(4, 4))
        perm = rng.permutation(4)
        a = M.report(M.ConfusionMatrix(counts=counts))
        b = M.report(M.ConfusionMatrix(counts=counts[np.ix_(perm, perm)]))
        worst = max(worst, _max_abs([a.accuracy, a.precision, a.recall, a.f1, a.mcc],
                                    [b.accuracy, b.precision, b.recall, b.f1, b.mcc]))
    return worst


@check("metrics.bounds_and_accuracy", "metrics", REDUCTION_TOL)
def _(rng, cfg):
    worst = 0.0
    for _ in range(50):
        k = int(rng.integers(2, 6))
        counts = rng.integers(0, 10, size=(k, k)) * rng.integers(0, 2, size=(k, k))
        cm = M.ConfusionMatrix(counts=counts)
        r = M.report(cm)
        for v in (r.accuracy, r.precision, r.recall, r.f1):
            worst = max(worst, -v, v - 1.0)
        worst = max(worst, abs(r.mcc) - 1.0)
        if cm.total:
            worst = max(worst, abs(r.accuracy - np.trace(counts) / counts.sum()))
    return max(worst, 0.0)


# ---------------------------------------------------------- data pipeline

@check("data.pnm_roundtrip", "data-pipeline", 0.0)
def _(rng, cfg):
    bad = 0
    for channels, maxval in ((1, 255), (3, 255), (1, 65535), (3, 1000)):
        px = rng.integers(0, maxval + 1, size=(5, 7, channels))
        blob = D.encode_pnm(px, maxval)
        decoded, mv = D.decode_pnm(blob)
        bad += D.encode_pnm(decoded, mv) != blob
    return float(bad)


@check("data.rot90_oracle", "data-pipeline", REDUCTION_TOL)
def _(rng, cfg):
    marker = rng.uniform(size=(1, 3, 3))
    return _max_abs(D.rotate(marker, 90.0), np.rot90(marker, 1, axes=(1, 2)))


@check("data.augment_preserves_shape", "data-pipeline", 0.0)
def _(rng, cfg):
    bad = 0
    for _ in range(20):
        img = rng.uniform(size=(3, 16, 12))
        bad += D.augment(img, rng).shape != img.shape
    return float(bad)


@check("data.split_partition", "data-pipeline", 0.0)
def _(rng, cfg):
    bad = 0
    for _ in range(20):
        labels = rng.integers(0, 4, size=int(rng.integers(1, 60)))
        a, b = rng.uniform(0.0, 1.0, size=2)
        lo, hi = min(a, b), max(a, b)
        splits = D.assign_splits(labels, (lo, hi - lo, 1.0 - hi), int(rng.integers(1000)))
        bad += len(splits) != labels.size or not set(splits) <= set(SPLITS)
    return float(bad)


@check("data.batch_determinism", "data-pipeline", 0.0)
def _(rng, cfg):
    index = D.synth_dataset(classes=2, per_class=4, hw=32, seed=int(rng.integers(1000)), ratios=(1.0, 0.0, 0.0))

    def batches():
        src = D.ImageSource(index, (32, 32))
        stats = D.channel_stats(src, "train")
        return list(D.make_batches(src, "train", 3, stats, seed=5, epoch=2, augment_config=D.AugmentConfig()))

    a, b = batches(), batches()
    diff = sum(_max_abs(x.images, y.images) + float(not np.array_equal(x.labels, y.labels)) for x, y in zip(a, b))
    return float(diff + (len(a) != len(b)))


# ------------------------------------------------------------- train-eval

@check("train.adam_first_step", "train-eval", REDUCTION_TOL)
def _(rng, cfg):
    from .optim import Adam

    p = Parameter(np.zeros(1), name="p")
    p.grad[...] = 1.0
    opt = Adam()
    opt.step([p])
    # bias-corrected moments are both 1 after one step
    return abs(float(p.data[0]) + opt.lr / (1.0 + opt.eps))


@check("train.reproducible_and_roundtrip", "train-eval", 0.0)
def _(rng, cfg):
    from .checkpoint import load_checkpoint, save_checkpoint
    from .loop import TrainConfig, evaluate, train

    index = D.synth_dataset(classes=3, per_class=6, hw=32, seed=int(rng.integers(1000)), ratios=(0.5, 0.25, 0.25))
    mcfg = ModelConfig.tiny()
    tcfg = TrainConfig(epochs=2, batch_size=4, image_size=32, seed=int(rng.integers(1000)))
    a, b = train(mcfg, index, tcfg), train(mcfg, index, tcfg)
    diff = float(json.dumps(a.log, sort_keys=True) != json.dumps(b.log, sort_keys=True))
    with tempfile.TemporaryDirectory() as tmp:
        path = f"{tmp}/x.eatkpt"
        save_checkpoint(a.best, path)
        loaded = load_checkpoint(path)
    diff += sum(float(not np.array_equal(loaded.params[k], v)) for k, v in a.best.params.items())
    diff += float(evaluate(a.best, index, "test").to_json() != evaluate(loaded, index, "test").to_json())
    return diff


# ------------------------------------------------------------------ runner

def verify(config: ModelConfig | None = None, seed: int = 0, filter: str | None = None) -> Ledger:  # noqa: A002
    """Run every registered check (or those whose name contains ``filter``).

    Each check draws from its own stream keyed on (seed, check name), so the
    ledger is deterministic in ``seed`` and unaffected by filtering.
    """
    config = config or ModelConfig.mini()
    results = []
    for c in _REGISTRY:
        if filter and filter not in c.name:
            continue
        rng = np.random.default_rng([seed, zlib.crc32(c.name.encode())])
        detail = ""
        try:
            value = c.fn(rng, config)
            if isinstance(value, tuple):
                value, detail = value
            value = float(value)
            if c.tolerance is None:
                passed = True
            elif c.tolerance == 0:
                passed = value == 0
            else:
                passed = value < c.tolerance
        except Exception as exc:  # a crashing check is a failing check
            value, passed, detail = None, False, f"{type(exc).__name__}: {exc}"
        results.append(CheckResult(c.name, c.module, passed, value, c.tolerance, detail))
    return Ledger(seed, results)

