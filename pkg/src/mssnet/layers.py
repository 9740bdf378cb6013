"""Primitive network layers: convolution, PReLU, residual block,
bilinear resampling, pixel shuffle/unshuffle, channel concat.

All ops take and return graph nodes holding 4-D (N, C, H, W) arrays.
Convolutions are 3x3 (pad 1) or 1x1 (pad 0), stride 1, bias-free; the
3x3 path is im2col plus one BLAS matmul, chunked over batch and output
rows so the column matrix stays within a fixed memory budget.
"""

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .autodiff import Variable, add, apply
from .errors import ContractViolation

# im2col strip budget, in column-matrix elements (~64 MB in float32)
_COL_BUDGET = 1 << 24


def _check4d(name, arr):
    if arr.ndim != 4:
        raise ContractViolation(f"{name}: expected 4-D NCHW, got shape {arr.shape}")


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConvSpec:
    """Shape contract of one convolution layer."""
    k: int
    c_in: int
    c_out: int
    s: int = 1
    p: int = 0
    bias: bool = False

    def __post_init__(self):
        if self.k not in (1, 3):
            raise ContractViolation(f"conv: filter size {self.k} not in (1, 3)")
        if self.s != 1:
            raise ContractViolation("conv: stride must be 1")
        if self.p not in (0, 1):
            raise ContractViolation(f"conv: padding {self.p} not in (0, 1)")
        if self.bias:
            raise ContractViolation("conv: bias terms are not part of this family")

    @property
    def weight_shape(self):
        return (self.c_out, self.c_in, self.k, self.k)


def _zero_pad(x, p):
    # hand-rolled: np.pad costs ~50us of bookkeeping per call, which
    # dominates small convolutions
    if p == 0:
        return x
    n, c, h, w = x.shape
    xp = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=x.dtype)
    xp[:, :, p:p + h, p:p + w] = x
    return xp


def _im2col(xp, k):
    """(N, C, Hp, Wp) padded input -> (N, C*k*k, H_out*W_out) columns."""
    n, c, hp, wp = xp.shape
    ho, wo = hp - k + 1, wp - k + 1
    s0, s1, s2, s3 = xp.strides
    v = as_strided(xp, (n, c, k, k, ho, wo), (s0, s1, s2, s3, s2, s3),
                   writeable=False)
    return v.reshape(n, c * k * k, ho * wo)


def _row_strips(c_k2, h_out, w_out):
    """Split output rows so each strip's column matrix fits the budget."""
    rows = max(1, min(h_out, _COL_BUDGET // max(1, c_k2 * w_out)))
    return [(r0, min(r0 + rows, h_out)) for r0 in range(0, h_out, rows)]


def _conv_forward(xv, wv, p):
    c_out, c_in, k, _ = wv.shape
    if k == 1:
        out = np.tensordot(wv[:, :, 0, 0], xv, axes=([1], [1]))
        return np.ascontiguousarray(out.transpose(1, 0, 2, 3))
    n, _, h, w = xv.shape
    h_out, w_out = h + 2 * p - k + 1, w + 2 * p - k + 1
    xp = _zero_pad(xv, p)
    w_mat = wv.reshape(c_out, c_in * k * k)
    out = np.empty((n, c_out, h_out, w_out), dtype=xv.dtype)
    for r0, r1 in _row_strips(c_in * k * k, h_out, w_out):
        cols = _im2col(xp[:, :, r0:r1 + k - 1, :], k)
        out[:, :, r0:r1, :] = (w_mat @ cols).reshape(n, c_out, r1 - r0, w_out)
    return out


def _conv_backward(g, xv, wv, p, need_x, need_w):
    c_out, c_in, k, _ = wv.shape
    n, _, h, w = xv.shape
    dx = dw = None
    if k == 1:
        if need_w:
            dw = np.tensordot(g, xv, axes=([0, 2, 3], [0, 2, 3]))
            dw = dw.reshape(wv.shape)
        if need_x:
            dx = np.tensordot(wv[:, :, 0, 0].T, g, axes=([1], [1]))
            dx = np.ascontiguousarray(dx.transpose(1, 0, 2, 3))
        return dx, dw
    h_out, w_out = g.shape[2], g.shape[3]
    xp = _zero_pad(xv, p)
    w_mat = wv.reshape(c_out, c_in * k * k)
    dw_mat = np.zeros_like(w_mat) if need_w else None
    dxp = np.zeros_like(xp) if need_x else None
    for r0, r1 in _row_strips(c_in * k * k, h_out, w_out):
        g_mat = g[:, :, r0:r1, :].reshape(n, c_out, -1)
        if need_w:
            cols = _im2col(xp[:, :, r0:r1 + k - 1, :], k)
            dw_mat += np.tensordot(g_mat, cols, axes=([0, 2], [0, 2]))
        if need_x:
            dcols = (w_mat.T @ g_mat).reshape(n, c_in, k, k, r1 - r0, w_out)
            for di in range(k):
                for dj in range(k):
                    dxp[:, :, r0 + di:r1 + di, dj:dj + w_out] += dcols[:, :, di, dj]
    if need_x:
        dx = dxp[:, :, p:p + h, p:p + w] if p else dxp
        dx = np.ascontiguousarray(dx)
    if need_w:
        dw = dw_mat.reshape(wv.shape)
    return dx, dw


def conv2d(x, spec, weight):
    """Stride-1 zero-padded convolution per the spec's shape contract."""
    xv, wv = x.value, weight.value
    _check4d("conv2d", xv)
    if wv.shape != spec.weight_shape:
        raise ContractViolation(
            f"conv2d: weight shape {wv.shape} != spec {spec.weight_shape}")
    if xv.shape[1] != spec.c_in:
        raise ContractViolation(
            f"conv2d: input has {xv.shape[1]} channels, spec wants {spec.c_in}")
    out = _conv_forward(xv, wv, spec.p)
    need_x, need_w = x.needs_grad, weight.needs_grad

    def bwd(g):
        return _conv_backward(g, xv, wv, spec.p, need_x, need_w)

    return apply(out, (x, weight), bwd)


# ---------------------------------------------------------------------------
# PReLU
# ---------------------------------------------------------------------------

def prelu(x, slopes):
    """out = x where x >= 0 else slope_c * x; one slope per channel."""
    xv, sv = x.value, slopes.value
    _check4d("prelu", xv)
    if sv.shape != (1, xv.shape[1], 1, 1):
        raise ContractViolation(
            f"prelu: slopes shape {sv.shape} != (1, {xv.shape[1]}, 1, 1)")
    neg = xv < 0
    out = np.where(neg, sv * xv, xv)

    def bwd(g):
        dx = np.where(neg, g * sv, g)
        ds = np.where(neg, g * xv, 0).sum(axis=(0, 2, 3), keepdims=True)
        return dx, ds

    return apply(out, (x, slopes), bwd)


# ---------------------------------------------------------------------------
# bilinear resampling (half-pixel centers, no antialias)
# ---------------------------------------------------------------------------

def _down2_last(x):
    # Factor-0.5 with half-pixel centers reduces to the 2-pixel mean.
    return 0.5 * (x[..., 0::2] + x[..., 1::2])


def _down2_last_adjoint(g):
    n2 = 2 * g.shape[-1]
    dx = np.empty(g.shape[:-1] + (n2,), dtype=g.dtype)
    dx[..., 0::2] = 0.5 * g
    dx[..., 1::2] = 0.5 * g
    return dx


def _up2_last(x):
    # out[2j] = 0.25 x[j-1] + 0.75 x[j], out[2j+1] = 0.75 x[j] + 0.25 x[j+1],
    # neighbors clamped at the edges.
    n = x.shape[-1]
    out = np.empty(x.shape[:-1] + (2 * n,), dtype=x.dtype)
    if n == 1:
        out[..., 0] = x[..., 0]
        out[..., 1] = x[..., 0]
        return out
    even = out[..., 0::2]
    odd = out[..., 1::2]
    even[..., 0] = x[..., 0]
    even[..., 1:] = 0.25 * x[..., :-1] + 0.75 * x[..., 1:]
    odd[..., :-1] = 0.75 * x[..., :-1] + 0.25 * x[..., 1:]
    odd[..., -1] = x[..., -1]
    return out


def _up2_last_adjoint(g):
    n = g.shape[-1] // 2
    dx = np.empty(g.shape[:-1] + (n,), dtype=g.dtype)
    if n == 1:
        dx[..., 0] = g[..., 0] + g[..., 1]
        return dx
    ge = g[..., 0::2]
    go = g[..., 1::2]
    dx[..., 1:-1] = (0.25 * go[..., :-2] + 0.75 * ge[..., 1:-1]
                     + 0.75 * go[..., 1:-1] + 0.25 * ge[..., 2:])
    dx[..., 0] = ge[..., 0] + 0.75 * go[..., 0] + 0.25 * ge[..., 1]
    dx[..., -1] = 0.25 * go[..., -2] + 0.75 * ge[..., -1] + go[..., -1]
    return dx


def _apply_hw(x, fn):
    x = fn(x)
    return fn(x.swapaxes(-1, -2)).swapaxes(-1, -2)


def bilinear_resize(x, ratio):
    """Resample by 0.5 or 2 with half-pixel sampling, no antialias filter."""
    xv = x.value
    _check4d("bilinear_resize", xv)
    if ratio == 1:
        return x
    if ratio == 0.5:
        if xv.shape[2] % 2 or xv.shape[3] % 2:
            raise ContractViolation(
                f"bilinear_resize 0.5: odd spatial dims {xv.shape[2:]}" )
        out = _apply_hw(xv, _down2_last)

        def bwd(g):
            # adjoint order is irrelevant for the separable stencil,
            # but keep it mirrored for clarity
            return (_apply_hw(g, _down2_last_adjoint),)

        return apply(np.ascontiguousarray(out), (x,), bwd)
    if ratio == 2:
        out = _apply_hw(xv, _up2_last)

        def bwd(g):
            return (_apply_hw(g, _up2_last_adjoint),)

        return apply(np.ascontiguousarray(out), (x,), bwd)
    raise ContractViolation(f"bilinear_resize: ratio {ratio} not in (0.5, 1, 2)")


# ---------------------------------------------------------------------------
# pixel shuffle / unshuffle
# ---------------------------------------------------------------------------

def _unshuffle_raw(xv, r):
    n, c, h, w = xv.shape
    out = xv.reshape(n, c, h // r, r, w // r, r)
    out = out.transpose(0, 1, 3, 5, 2, 4)
    return np.ascontiguousarray(out.reshape(n, c * r * r, h // r, w // r))


def _shuffle_raw(xv, r):
    n, c, h, w = xv.shape
    out = xv.reshape(n, c // (r * r), r, r, h, w)
    out = out.transpose(0, 1, 4, 2, 5, 3)
    return np.ascontiguousarray(out.reshape(n, c // (r * r), h * r, w * r))


def pixel_unshuffle(x, r=2):
    """Space-to-channel: out channel c*r*r + dy*r + dx at (i, j) takes
    in channel c at (i*r + dy, j*r + dx)."""
    xv = x.value
    _check4d("pixel_unshuffle", xv)
    if xv.shape[2] % r or xv.shape[3] % r:
        raise ContractViolation(
            f"pixel_unshuffle: dims {xv.shape[2:]} not divisible by {r}")
    return apply(_unshuffle_raw(xv, r), (x,), lambda g: (_shuffle_raw(g, r),))


def pixel_shuffle(x, r=2):
    """Exact inverse of pixel_unshuffle under the same channel ordering."""
    xv = x.value
    _check4d("pixel_shuffle", xv)
    if xv.shape[1] % (r * r):
        raise ContractViolation(
            f"pixel_shuffle: {xv.shape[1]} channels not divisible by {r * r}")
    return apply(_shuffle_raw(xv, r), (x,), lambda g: (_unshuffle_raw(g, r),))


# ---------------------------------------------------------------------------
# concat
# ---------------------------------------------------------------------------

def concat_channels(a, b):
    """Stack a's channels before b's; N, H, W must match."""
    av, bv = a.value, b.value
    _check4d("concat_channels", av)
    _check4d("concat_channels", bv)
    if av.shape[0] != bv.shape[0] or av.shape[2:] != bv.shape[2:]:
        raise ContractViolation(
            f"concat_channels: incompatible shapes {av.shape} vs {bv.shape}")
    ca = av.shape[1]

    def bwd(g):
        return g[:, :ca], g[:, ca:]

    return apply(np.concatenate([av, bv], axis=1), (a, b), bwd)


# ---------------------------------------------------------------------------
# parameterized layer objects
# ---------------------------------------------------------------------------

# Init gains, as multiples of the fan-in He std. Convs feeding a
# rectifier keep 1.0; pure linear projections (down/up, extractors,
# fusion mixes) use 1/sqrt(2) so they preserve variance instead of
# doubling it; additive side branches (csff injections, residual
# closing convs, image heads) start small so deep stacks stay near
# the identity at init. Without this the 6-stage models amplify their
# input by ~1e6 before the first optimizer step.
LINEAR_INIT = 1.0 / math.sqrt(2.0)
BRANCH_INIT = 0.1


class Conv:
    """A convolution layer owning its weight Variable."""

    def __init__(self, name, c_in, c_out, k, rng, dtype, p=None, init_scale=1.0):
        if p is None:
            p = (k - 1) // 2
        self.spec = ConvSpec(k=k, c_in=c_in, c_out=c_out, s=1, p=p)
        std = init_scale * math.sqrt(2.0 / (c_in * k * k))
        init = rng.normal(0.0, std, size=self.spec.weight_shape)
        self.weight = Variable(name + "/weight", init.astype(dtype))

    def __call__(self, x):
        return conv2d(x, self.spec, self.weight)

    def variables(self):
        yield self.weight


class PReLU:
    """Per-channel parametric ReLU, slopes initialized to 0.25."""

    def __init__(self, name, channels, dtype):
        init = np.full((1, channels, 1, 1), 0.25, dtype=dtype)
        self.slopes = Variable(name + "/slopes", init)

    def __call__(self, x):
        return prelu(x, self.slopes)

    def variables(self):
        yield self.slopes


class ResBlock:
    """conv3x3 -> PReLU -> conv3x3, summed with the input."""

    def __init__(self, name, channels, rng, dtype):
        self.conv1 = Conv(name + "/conv1", channels, channels, 3, rng, dtype)
        self.act = PReLU(name + "/act", channels, dtype)
        self.conv2 = Conv(name + "/conv2", channels, channels, 3, rng, dtype,
                          init_scale=BRANCH_INIT)

    def __call__(self, x):
        return add(x, self.conv2(self.act(self.conv1(x))))

    def variables(self):
        yield from self.conv1.variables()
        yield from self.act.variables()
        yield from self.conv2.variables()


def res_block(x, params):
    """Functional form over a ResBlock instance."""
    return params(x)
