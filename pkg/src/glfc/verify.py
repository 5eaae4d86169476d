"""Numerical verification suites: finite-difference gradients, the scan
oracle, window constants and file-format round trips.

Everything here runs in double precision. Each check returns a
``CheckResult``; nothing raises on a numerical failure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor

F64 = np.float64

OP_TOL = 1e-4
E2E_TOL = 1e-3
FD_STEP = 1e-5


@dataclass
class CheckResult:
    name: str
    passed: bool
    max_error: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<28} max_err={self.max_error:.3e}  {self.detail}"


# -- finite differences ---------------------------------------------------

def _rel_err(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    # the floor keeps exactly-zero gradients (e.g. a conv bias feeding an
    # instance norm) from turning finite-difference noise into error 1.0
    scale = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / scale)


def fd_check(fn: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = FD_STEP,
             max_coords: Optional[int] = None, rng: Optional[np.random.Generator] = None) -> float:
    """Max relative error between backward() and central differences.

    When ``max_coords`` is set only that many randomly chosen coordinates
    per input are compared.
    """
    for t in inputs:
        t.grad = None
    loss = fn()
    loss.backward()
    worst = 0.0
    for t in inputs:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = (rng or np.random.default_rng(0)).choice(flat.size, max_coords, replace=False)
        numeric = np.empty(len(coords))
        for k, i in enumerate(coords):
            old = flat[i]
            flat[i] = old + h
            up = fn().item()
            flat[i] = old - h
            down = fn().item()
            flat[i] = old
            numeric[k] = (up - down) / (2 * h)
        worst = max(worst, _rel_err(analytic.reshape(-1)[coords], numeric))
    return worst


def _leaf(a) -> Tensor:
    return Tensor(np.asarray(a, dtype=F64), requires_grad=True)


def _away(rng, shape, lo=0.1, hi=1.0):
    """Random values bounded away from zero (keeps clear of kinks at 0)."""
    return rng.choice([-1.0, 1.0], shape) * rng.uniform(lo, hi, shape)


# -- per-op gradient cases ------------------------------------------------
# each returns (loss_fn, inputs) for one seeded trial

def _case_binary(op):
    def make(rng):
        a = _leaf(rng.normal(size=(3, 4)))
        b = _leaf(rng.normal(size=(4,)) if op is not T.div else rng.uniform(0.5, 2.0, (4,)))
        w = Tensor(rng.normal(size=(3, 4)))
        return (lambda: (op(a, b) * w).sum()), [a, b]
    return make


def _unary(op, sample=None):
    def make(rng):
        x = _leaf(sample(rng) if sample else rng.normal(size=(3, 5)))
        w = Tensor(rng.normal(size=x.shape))
        return (lambda: (op(x) * w).sum()), [x]
    return make


def _clip_sample(rng):
    x = rng.uniform(-2.0, 2.0, (4, 5))
    near = (np.abs(x - 1.0) < 0.05) | (np.abs(x + 1.0) < 0.05)
    x[near] += 0.2
    return x


def _with_weights(build):
    def make(rng):
        fn_out, inputs = build(rng)
        w = Tensor(rng.normal(size=fn_out().shape))
        return (lambda: (fn_out() * w).sum()), inputs
    return make


def _c_matmul(rng):
    a, b = _leaf(rng.normal(size=(5, 7))), _leaf(rng.normal(size=(7, 3)))
    return (lambda: T.matmul(a, b)), [a, b]


def _c_bmm(rng):
    a, b = _leaf(rng.normal(size=(2, 4, 3))), _leaf(rng.normal(size=(3, 2)))
    return (lambda: T.matmul(a, b)), [a, b]


def _c_conv3(rng):
    x = _leaf(rng.normal(size=(2, 3, 5, 4)))
    w = _leaf(rng.normal(size=(2, 3, 3, 3)))
    b = _leaf(rng.normal(size=(2,)))
    return (lambda: T.conv2d(x, w, b)), [x, w, b]


def _c_conv1(rng):
    x = _leaf(rng.normal(size=(1, 3, 4, 4)))
    w = _leaf(rng.normal(size=(2, 3, 1, 1)))
    b = _leaf(rng.normal(size=(2,)))
    return (lambda: T.conv2d(x, w, b)), [x, w, b]


def _c_dwconv(rng):
    x = _leaf(rng.normal(size=(2, 3, 4, 4)))
    w = _leaf(rng.normal(size=(3, 3, 3)))
    b = _leaf(rng.normal(size=(3,)))
    return (lambda: T.depthwise_conv2d(x, w, b)), [x, w, b]


def _c_maxpool(rng):
    # well-separated distinct values so no perturbation flips an argmax
    vals = rng.permutation(2 * 3 * 4 * 6).astype(F64) * 0.1
    x = _leaf(vals.reshape(2, 3, 4, 6))
    return (lambda: T.maxpool2(x)), [x]


def _c_upsample(rng):
    x = _leaf(rng.normal(size=(2, 2, 3, 3)))
    return (lambda: T.upsample2(x)), [x]


def _c_inorm(rng):
    x = _leaf(rng.normal(size=(2, 3, 4, 4)))
    g, b = _leaf(rng.normal(size=(3,))), _leaf(rng.normal(size=(3,)))
    return (lambda: T.instance_norm(x, g, b)), [x, g, b]


def _c_lnorm(rng):
    x = _leaf(rng.normal(size=(2, 3, 5)))
    g, b = _leaf(rng.normal(size=(5,))), _leaf(rng.normal(size=(5,)))
    return (lambda: T.layer_norm(x, g, b)), [x, g, b]


def _c_concat(rng):
    a, b = _leaf(rng.normal(size=(1, 2, 3, 3))), _leaf(rng.normal(size=(1, 3, 3, 3)))
    return (lambda: T.concat([a, b], axis=1)), [a, b]


def _c_reshape(rng):
    x = _leaf(rng.normal(size=(2, 3, 4)))
    return (lambda: T.reshape(x, (4, 6))), [x]


def _c_permute(rng):
    x = _leaf(rng.normal(size=(2, 3, 4)))
    return (lambda: T.permute(x, (2, 0, 1))), [x]


def _c_flip(rng):
    x = _leaf(rng.normal(size=(2, 5, 3)))
    return (lambda: T.flip(x, 1)), [x]


def _c_getitem(rng):
    x = _leaf(rng.normal(size=(3, 6)))
    return (lambda: x[:, 2:5]), [x]


def _c_sum(rng):
    x = _leaf(rng.normal(size=(3, 4, 2)))
    return (lambda: T.tsum(x, axis=(0, 2))), [x]


def _c_mean(rng):
    x = _leaf(rng.normal(size=(3, 4)))
    return (lambda: T.tmean(x, axis=1, keepdims=True)), [x]


def _c_l1(rng):
    b = rng.normal(size=(4, 5))
    a = _leaf(b + _away(rng, (4, 5), 0.05, 1.0))
    bt = _leaf(b)
    return (lambda: T.l1_mean(a, bt) * 3.0), [a, bt]


def _c_scan(rng):
    from .ssm import scan
    P, B, L, E, D = 2, 2, 6, 3, 4
    x = _leaf(rng.normal(size=(P, B, L, E)))
    delta = _leaf(rng.uniform(0.05, 0.8, (P, B, L, E)))
    A = _leaf(-rng.uniform(0.3, 2.0, (P, E, D)))
    Bm = _leaf(rng.normal(size=(P, B, L, D)))
    Cm = _leaf(rng.normal(size=(P, B, L, D)))
    return (lambda: scan(x, delta, A, Bm, Cm)), [x, delta, A, Bm, Cm]


def _random_ssm(rng, E, D, n_sets=None, scale=0.3):
    from .ssm import SSMParams
    p = SSMParams(E, D, rng, dtype=F64, n_sets=n_sets)
    for _, t in p.named_parameters():
        t.data = t.data + rng.normal(0.0, scale, t.shape)
    return p


def _c_selective_scan(rng):
    from .ssm import selective_scan
    p = _random_ssm(rng, 3, 4)
    x = _leaf(rng.normal(size=(2, 7, 3)))
    return (lambda: selective_scan(x, p)), [x] + p.parameters()


def _c_ss2d(rng):
    from .nn import LayerNorm, Linear
    from .ssm import ss2d
    E = 3
    p = _random_ssm(rng, E, 2, n_sets=4)
    norm, proj = LayerNorm(E, F64), Linear(E, E, rng, F64)
    norm.gamma.data = norm.gamma.data + rng.normal(0, 0.2, E)
    x = _leaf(rng.normal(size=(1, 3, 3, E)))
    return (lambda: ss2d(x, p, norm, proj)), [x] + p.parameters() + norm.parameters() + proj.parameters()


def _c_vss_block(rng):
    from .meunet import VSSBlock
    blk = VSSBlock(4, 3, rng, dtype=F64, zero_out=False)
    x = _leaf(rng.normal(size=(2, 9, 4)))
    return (lambda: blk(x)), [x] + blk.parameters()


def _c_mcl(rng):
    from .losses import BONE, SOFT, mcl_loss
    n = 64
    y = rng.uniform(-1.0, 1.0, n)
    p = np.clip(y + _away(rng, n, 0.02, 0.3), -1.0, 1.0)
    # keep both clear of the window edges where the clipped renormalisation kinks
    for arr in (p, y):
        for edge in (SOFT.lo, SOFT.hi, BONE.hi):
            near = np.abs(arr - edge) < 1e-3
            arr[near] -= 5e-3
    # mix of pixels inside and outside each window
    pt, yt = _leaf(p.reshape(1, 1, 8, 8)), _leaf(y.reshape(1, 1, 8, 8))
    return (lambda: mcl_loss(pt, yt)[0]), [pt, yt]


def _elementwise_cases() -> Dict[str, Callable]:
    return {
        "add": _case_binary(T.add),
        "sub": _case_binary(T.sub),
        "mul": _case_binary(T.mul),
        "div": _case_binary(T.div),
        "exp": _unary(T.exp),
        "tanh": _unary(T.tanh),
        "sigmoid": _unary(T.sigmoid),
        "silu": _unary(T.silu),
        "softplus": _unary(T.softplus),
        "leaky_relu": _unary(lambda x: T.leaky_relu(x, 0.2), lambda r: _away(r, (3, 5))),
        "abs": _unary(T.absolute, lambda r: _away(r, (3, 5))),
        "clip": _unary(lambda x: T.clip(x, -1.0, 1.0), _clip_sample),
    }


def _op_cases() -> Dict[str, Callable]:
    cases = _elementwise_cases()
    for name, build in {
        "matmul": _c_matmul, "matmul_batched": _c_bmm, "conv2d": _c_conv3, "conv2d_1x1": _c_conv1,
        "depthwise_conv2d": _c_dwconv, "maxpool2": _c_maxpool, "upsample2": _c_upsample,
        "instance_norm": _c_inorm, "layer_norm": _c_lnorm, "concat": _c_concat,
        "reshape": _c_reshape, "permute": _c_permute, "flip": _c_flip, "getitem": _c_getitem,
        "sum": _c_sum, "mean": _c_mean,
    }.items():
        cases[name] = _with_weights(build)
    cases["l1_mean"] = _c_l1
    return cases


def _composite_cases() -> Dict[str, tuple]:
    # name -> (builder, trials, max_coords per input)
    return {
        "scan": (_with_weights(_c_scan), 20, None),
        "selective_scan": (_with_weights(_c_selective_scan), 20, None),
        "ss2d": (_with_weights(_c_ss2d), 5, None),
        "vss_block": (_with_weights(_c_vss_block), 3, 12),
        "mcl_loss": (_c_mcl, 20, None),
    }


def gradcheck_op(name: str, trials: Optional[int] = None, seed: int = 0) -> CheckResult:
    ops = _op_cases()
    comps = _composite_cases()
    if name == "meunet_e2e":
        return gradcheck_e2e(seed=seed)
    if name in ops:
        build, n, coords = ops[name], 20, None
    elif name in comps:
        build, n, coords = comps[name]
    else:
        raise KeyError(f"unknown op {name!r}; known: {', '.join(all_op_names())}")
    n = trials or n
    worst = 0.0
    for trial in range(n):
        rng = np.random.default_rng([seed, trial, len(name)])
        fn, inputs = build(rng)
        worst = max(worst, fd_check(fn, inputs, max_coords=coords, rng=rng))
    extra = ""
    if name == "selective_scan":
        oracle = scan_oracle_suite(cases=20, seed=seed)
        extra = f"oracle_err={oracle.max_error:.2e}"
        if not oracle.passed:
            return CheckResult(name, False, worst, extra + " (oracle mismatch)")
    return CheckResult(name, worst < OP_TOL, worst, f"{n} trials {extra}".strip())


def directional_check(fn: Callable[[], Tensor], inputs: Sequence[Tensor], n_dirs: int,
                      rng: np.random.Generator, h: float = FD_STEP) -> float:
    """Compare <grad, v> with a central difference along random directions v."""
    for t in inputs:
        t.grad = None
    fn().backward()
    grads = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in inputs]
    worst = 0.0
    for _ in range(n_dirs):
        dirs = [rng.normal(size=t.shape) for t in inputs]
        norm = math.sqrt(sum(float((v * v).sum()) for v in dirs))
        dirs = [v / norm for v in dirs]
        analytic = sum(float((g * v).sum()) for g, v in zip(grads, dirs))
        base = [t.data.copy() for t in inputs]
        for t, b, v in zip(inputs, base, dirs):
            t.data = b + h * v
        up = fn().item()
        for t, b, v in zip(inputs, base, dirs):
            t.data = b - h * v
        down = fn().item()
        for t, b in zip(inputs, base):
            t.data = b
        numeric = (up - down) / (2 * h)
        worst = max(worst, abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-12))
    return worst


def gradcheck_e2e(seed: int = 0, coords: int = 24, n_dirs: int = 8) -> CheckResult:
    """Miniature MEUNet (32x32, L=16, channels 4/8/16) vs central differences.

    Input pixels are checked coordinate-wise; parameters along random
    directions through the full parameter vector.
    """
    from .meunet import build_model, miniature_config

    model = build_model(miniature_config("meunet", 32, token_count=16), seed=seed, dtype=F64)
    rng = np.random.default_rng(seed + 1)
    for blk in (b for s in model.skip_vss for b in s.blocks):
        blk.out_proj.weight.data = rng.normal(0.0, 0.3, blk.out_proj.weight.shape)
    x = _leaf(rng.uniform(-1, 1, (1, 1, 32, 32)))
    w = Tensor(rng.normal(size=(1, 1, 32, 32)))
    fn = lambda: (model(x) * w).sum()
    err = max(fd_check(fn, [x], max_coords=coords, rng=rng),
              directional_check(fn, model.parameters(), n_dirs, rng))
    return CheckResult("meunet_e2e", err < E2E_TOL, err,
                       f"{coords} input coords + {n_dirs} parameter directions")


def all_op_names() -> List[str]:
    return list(_op_cases()) + list(_composite_cases()) + ["meunet_e2e"]


def gradcheck_all(seed: int = 0) -> List[CheckResult]:
    return [gradcheck_op(name, seed=seed) for name in all_op_names()]


# -- selective scan oracle ------------------------------------------------

def scan_oracle(x, w_delta, delta_bias, w_b, w_c, a_log, d_skip):
    """Closed-form y_t = sum_s <C_t, prod_{r=s+1..t} A_bar_r * B_bar_s> x_s + D x_t."""
    x = np.asarray(x, dtype=F64)
    L, E = x.shape
    A = -np.exp(a_log)                              # E, D
    pre = x @ w_delta + delta_bias
    delta = np.where(pre > 30, pre, np.log(1.0 + np.exp(np.minimum(pre, 30))))
    Bm, Cm = x @ w_b, x @ w_c                       # L, D
    a_bar = np.exp(delta[:, :, None] * A[None])     # L, E, D
    b_bar = (a_bar - 1.0) / A[None] * Bm[:, None, :]
    y = np.zeros((L, E))
    for t in range(L):
        acc = np.zeros_like(A)
        for s in range(t + 1):
            decay = np.ones_like(A)
            for r in range(s + 1, t + 1):
                decay = decay * a_bar[r]
            acc = acc + decay * b_bar[s] * x[s][:, None]
        y[t] = (acc * Cm[t][None, :]).sum(axis=1) + d_skip * x[t]
    return y


def scan_oracle_suite(cases: int = 100, seed: int = 0, tol: float = 1e-10) -> CheckResult:
    from .ssm import selective_scan
    worst = 0.0
    for c in range(cases):
        rng = np.random.default_rng([seed, 7, c])
        L, D, E = int(rng.integers(1, 65)), int(rng.integers(1, 9)), int(rng.integers(1, 5))
        p = _random_ssm(rng, E, D)
        x = rng.normal(size=(L, E))
        with T.no_grad():
            got = selective_scan(Tensor(x), p).data
        want = scan_oracle(x, p.w_delta.data, p.delta_bias.data, p.w_B.data, p.w_C.data,
                           p.A_log.data, p.D_skip.data)
        worst = max(worst, float(np.max(np.abs(got - want))))
    return CheckResult("scan_oracle", worst < tol, worst, f"{cases} cases, L<=64 D<=8 E<=4")


def zero_limit_check(delta: float = 1e-12) -> CheckResult:
    from .ssm import discretize
    rng = np.random.default_rng(0)
    A = -rng.uniform(0.1, 8.0, (4, 8))
    a_bar, b_bar = discretize(np.full(4, delta), A, rng.normal(size=8))
    err = max(float(np.max(np.abs(a_bar - 1.0))), float(np.max(np.abs(b_bar))))
    return CheckResult("scan_zero_limit", err < 1e-9, err, f"delta={delta:g}")


# -- window constants and formats ----------------------------------------

def window_constant_check() -> CheckResult:
    from .losses import SOFT, hu_to_norm
    lo, hi = float(hu_to_norm(-250.0)), float(hu_to_norm(250.0))
    err = max(abs(lo - SOFT.lo), abs(hi - SOFT.hi))
    return CheckResult("window_constants", err < 5e-4, err,
                       f"hu(-250)={lo:.5f} hu(250)={hi:.5f}")


def format_roundtrip_check(cases: int = 100, seed: int = 0) -> CheckResult:
    from .io import (Volume, checkpoint_bytes, checkpoint_parse, gvol_bytes, gvol_parse)
    bad = 0
    for c in range(cases):
        rng = np.random.default_rng([seed, 11, c])
        rank = int(rng.integers(2, 4))
        dims = tuple(int(d) for d in rng.integers(1, 9, rank))
        v = Volume(rng.normal(0, 500, dims).astype(np.float32),
                   tuple(float(s) for s in rng.uniform(0.2, 3.0, 3).astype(np.float32)))
        back = gvol_parse(gvol_bytes(v))
        if back.voxels.tobytes() != v.voxels.tobytes() or back.spacing != v.spacing:
            bad += 1
        weights = {f"layer{i}.w": rng.normal(size=tuple(rng.integers(1, 5, int(rng.integers(0, 4)))))
                   .astype(np.float32) for i in range(int(rng.integers(1, 6)))}
        got = checkpoint_parse(checkpoint_bytes(weights))
        if list(got) != list(weights) or any(got[k].tobytes() != weights[k].tobytes() for k in weights):
            bad += 1
    return CheckResult("format_roundtrip", bad == 0, float(bad), f"{cases} GVOL + {cases} GCKPT1 cases")


def selftest(seed: int = 0) -> List[CheckResult]:
    results = [window_constant_check(), scan_oracle_suite(seed=seed), zero_limit_check(),
               format_roundtrip_check(seed=seed)]
    results += gradcheck_all(seed=seed)
    return results
