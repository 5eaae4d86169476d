"""Selective state-space scan and its four-direction 2D extension (SS2D).

Per channel ``e`` the hidden state is a length-D vector with a diagonal
transition, so the zero-order-hold discretisation is elementwise::

    A_bar = exp(delta * A)
    B_bar = (exp(delta * A) - 1) / A * B
    h_t   = A_bar_t * h_{t-1} + B_bar_t * x_t
    y_t   = <C_t, h_t> + D_skip * x_t

``delta``, ``B`` and ``C`` are computed from the current token, ``A`` and
``D_skip`` are plain parameters.
"""

from __future__ import annotations

import enum
from typing import Optional

import numpy as np

from . import tensor as T
from .errors import ContractError, ShapeError
from .nn import LayerNorm, Linear, Module, param
from .tensor import Tensor


class ScanDirection(enum.IntEnum):
    ROW_FORWARD = 0
    ROW_BACKWARD = 1
    COL_FORWARD = 2
    COL_BACKWARD = 3


def discretize(delta, A, B):
    """Zero-order-hold discretisation for a diagonal ``A``.

    ``delta`` has shape [..., E], ``A`` [E, D] and ``B`` [..., D]; both
    results have shape [..., E, D].
    """
    delta = np.asarray(delta, dtype=float)
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if np.any(A >= 0):
        raise ContractError("discretize needs A < 0 elementwise")
    z = delta[..., :, None] * A
    a_bar = np.exp(z)
    b_bar = np.expm1(z) / A * B[..., None, :]
    return a_bar, b_bar


def scan(x: Tensor, delta: Tensor, A: Tensor, Bm: Tensor, Cm: Tensor) -> Tensor:
    """Run the discretised recurrence (without the D_skip term).

    Shapes: ``x`` and ``delta`` [P, B, L, E]; ``A`` [P, E, D];
    ``Bm`` and ``Cm`` [P, B, L, D]. P indexes independent parameter sets
    (scan directions). The state starts at zero.
    """
    xd, dd, ad, bd, cd = x.data, delta.data, A.data, Bm.data, Cm.data
    if xd.ndim != 4 or dd.shape != xd.shape:
        raise ShapeError(f"scan: x {xd.shape} and delta {dd.shape} must match and be 4-D")
    P, Bn, L, E = xd.shape
    D = ad.shape[-1]
    if ad.shape != (P, E, D) or bd.shape != (P, Bn, L, D) or cd.shape != (P, Bn, L, D):
        raise ShapeError(f"scan: incompatible A {ad.shape}, B {bd.shape}, C {cd.shape}")
    if np.any(ad >= 0):
        raise ContractError("scan needs A < 0 elementwise")

    Ab = ad[:, None, None]                     # P,1,1,E,D
    z = dd[..., None] * Ab                     # P,B,L,E,D
    a_bar = np.exp(z)
    q = np.expm1(z) / Ab
    u = q * bd[:, :, :, None, :] * xd[..., None]
    hs = np.empty_like(u)
    h = np.zeros_like(u[:, :, 0])
    for t in range(L):
        h = a_bar[:, :, t] * h + u[:, :, t]
        hs[:, :, t] = h
    y = np.einsum("pbled,pbld->pble", hs, cd)

    def grad_fn(gy):
        g_c = np.einsum("pble,pbled->pbld", gy, hs)
        gh = gy[..., None] * cd[:, :, :, None, :]
        for t in range(L - 2, -1, -1):
            gh[:, :, t] += a_bar[:, :, t + 1] * gh[:, :, t + 1]
        h_prev = np.zeros_like(hs)
        h_prev[:, :, 1:] = hs[:, :, :-1]
        g_abar = gh * h_prev
        g_q = gh * bd[:, :, :, None, :] * xd[..., None]
        g_b = np.einsum("pbled,pbled,pble->pbld", gh, q, xd)
        g_x = np.einsum("pbled,pbled,pbld->pble", gh, q, bd)
        # a_bar = exp(z); q = expm1(z) / A with z = delta * A
        g_z = g_abar * a_bar + g_q * a_bar / Ab
        g_delta = (g_z * Ab).sum(axis=-1)
        g_a = (g_z * dd[..., None] - g_q * q / Ab).sum(axis=(1, 2))
        return g_x, g_delta, g_a, g_b, g_c

    return T.make_op(y, (x, delta, A, Bm, Cm), grad_fn)


def _inverse_softplus(y: np.ndarray) -> np.ndarray:
    return y + np.log(-np.expm1(-y))


class SSMParams(Module):
    """Selective-SSM parameters; ``n_sets`` stacks independent copies on axis 0."""

    def __init__(self, embed: int, state: int, rng: np.random.Generator,
                 dtype=np.float32, n_sets: Optional[int] = None):
        lead = () if n_sets is None else (n_sets,)
        self.n_sets = n_sets
        a_log = np.log(np.arange(1, state + 1, dtype=float))
        self.A_log = param(np.broadcast_to(a_log, lead + (embed, state)).copy(), dtype)
        std = 1.0 / np.sqrt(embed)
        self.w_delta = param(rng.normal(0.0, 0.1 * std, lead + (embed, embed)), dtype)
        dt = np.exp(rng.uniform(np.log(0.01), np.log(0.1), lead + (embed,)))
        self.delta_bias = param(_inverse_softplus(dt), dtype)
        self.w_B = param(rng.normal(0.0, std, lead + (embed, state)), dtype)
        self.w_C = param(rng.normal(0.0, std, lead + (embed, state)), dtype)
        self.D_skip = param(np.ones(lead + (embed,)), dtype)

    def A(self) -> Tensor:
        return T.neg(T.exp(self.A_log))


def selective_scan(x: Tensor, p: SSMParams) -> Tensor:
    """Selective scan over the token axis.

    ``x`` is [L, E] or [B, L, E] for a single parameter set, or [P, B, L, E]
    when ``p`` stacks P sets.
    """
    stacked = p.n_sets is not None
    orig = x.shape
    if stacked:
        if x.ndim != 4 or x.shape[0] != p.n_sets:
            raise ShapeError(f"stacked scan expects [{p.n_sets},B,L,E], got {x.shape}")
        x4 = x
    elif x.ndim == 2:
        x4 = T.reshape(x, (1, 1) + x.shape)
    elif x.ndim == 3:
        x4 = T.reshape(x, (1,) + x.shape)
    else:
        raise ShapeError(f"selective_scan expects [L,E] or [B,L,E], got {x.shape}")
    P, Bn, L, E = x4.shape
    if L < 1:
        raise ShapeError("selective_scan needs at least one token")
    lead = (P,) if stacked else (1,)

    def per_set(w: Tensor) -> Tensor:
        return w if stacked else T.reshape(w, lead + w.shape)

    flat = T.reshape(x4, (P, Bn * L, E))
    delta = T.softplus(T.matmul(flat, per_set(p.w_delta))
                       + T.reshape(per_set(p.delta_bias), (P, 1, E)))
    Bm = T.matmul(flat, per_set(p.w_B))
    Cm = T.matmul(flat, per_set(p.w_C))
    D = Bm.shape[-1]
    y = scan(x4, T.reshape(delta, (P, Bn, L, E)), per_set(p.A()),
             T.reshape(Bm, (P, Bn, L, D)), T.reshape(Cm, (P, Bn, L, D)))
    y = y + x4 * T.reshape(per_set(p.D_skip), (P, 1, 1, E))
    return T.reshape(y, orig)


# -- 2D scanning ----------------------------------------------------------

def _grid_to_seq(grid: Tensor, direction: ScanDirection) -> Tensor:
    B, G, _, E = grid.shape
    if direction in (ScanDirection.COL_FORWARD, ScanDirection.COL_BACKWARD):
        grid = T.permute(grid, (0, 2, 1, 3))
    seq = T.reshape(grid, (B, G * G, E))
    if direction in (ScanDirection.ROW_BACKWARD, ScanDirection.COL_BACKWARD):
        seq = T.flip(seq, 1)
    return seq


def _seq_to_grid(seq: Tensor, direction: ScanDirection, G: int) -> Tensor:
    B, _, E = seq.shape
    if direction in (ScanDirection.ROW_BACKWARD, ScanDirection.COL_BACKWARD):
        seq = T.flip(seq, 1)
    grid = T.reshape(seq, (B, G, G, E))
    if direction in (ScanDirection.COL_FORWARD, ScanDirection.COL_BACKWARD):
        grid = T.permute(grid, (0, 2, 1, 3))
    return grid


def _check_grid(grid: Tensor) -> int:
    if grid.ndim != 4 or grid.shape[1] != grid.shape[2]:
        raise ShapeError(f"expected a square token grid [B,G,G,E], got {grid.shape}")
    return grid.shape[1]


def scan_direction(grid: Tensor, p: SSMParams, direction: ScanDirection) -> Tensor:
    """One directional selective scan of a [B,G,G,E] grid, mapped back to grid order."""
    G = _check_grid(grid)
    return _seq_to_grid(selective_scan(_grid_to_seq(grid, direction), p), direction, G)


def ss2d_scan(grid: Tensor, dirs: SSMParams) -> Tensor:
    """Sum of the four directional scans (before norm / projection)."""
    G = _check_grid(grid)
    if dirs.n_sets != 4:
        raise ShapeError("ss2d needs a 4-set SSMParams (one per direction)")
    seqs = T.stack([_grid_to_seq(grid, d) for d in ScanDirection], axis=0)
    ys = selective_scan(seqs, dirs)
    out = None
    for d in ScanDirection:
        g = _seq_to_grid(ys[int(d)], d, G)
        out = g if out is None else out + g
    return out


def ss2d(grid: Tensor, dirs: SSMParams, norm: LayerNorm, out_proj: Linear,
         gate: Optional[Tensor] = None) -> Tensor:
    """Four-direction scan, merged by summation, normalised and projected.

    When ``gate`` is given the normalised map is multiplied by silu(gate)
    before the projection (the VSS block wiring).
    """
    y = norm(ss2d_scan(grid, dirs))
    if gate is not None:
        y = y * T.silu(gate)
    return out_proj(y)


def token_grid_side(n_tokens: int) -> int:
    side = int(round(np.sqrt(n_tokens)))
    if side * side != n_tokens:
        raise ShapeError(f"token count {n_tokens} is not a perfect square")
    return side
