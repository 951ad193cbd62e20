"""Generator and discriminator for joint colorization + super-resolution.

The generator runs two branches over a shared initial feature map: a
colorization branch (strided encoder, optional pyramid valve cross attention
against an encoded reference, self-attention decoder back to input
resolution) and a texture branch (residual blocks). A 3x3 convolution fuses
them, and a continuous pixel mapping head regresses normalized Lab values at
any magnification from the corner-aligned resized feature plus a local
relative coordinate per output pixel.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .autodiff import (
    Tensor,
    avg_pool2x2,
    bilinear_resize,
    concat_channels,
    leaky_relu,
    matmul,
    reduce_mean,
    reshape,
    sigmoid,
    slice_channels,
    softmax,
    transpose,
)
from .errors import UsageError
from .nn import Conv2d, Linear, Module
from .seeding import derive_rng


class Mode(Enum):
    AUTO = "auto"
    REF = "ref"


class ConfigError(UsageError):
    """Model hyperparameters inconsistent with each other or the input size."""


@dataclass
class SCSNetConfig:
    base_channels: int = 64
    deep_channels: int = 256
    attn_qk_channels: int = 0  # 0 -> deep_channels // 8
    pyramid_levels: int = 3
    sr_blocks: int = 4
    cpm_hidden: int = 128
    cpm_layers: int = 4  # the mapping head is four linear layers by design
    input_size: int = 16  # expected (square) source resolution

    def __post_init__(self):
        if self.attn_qk_channels == 0:
            self.attn_qk_channels = self.deep_channels // 8
        if self.deep_channels % 8 != 0:
            raise ConfigError(f"deep_channels must be divisible by 8, got {self.deep_channels}")
        if self.deep_channels % 2 != 0 or self.base_channels < 1:
            raise ConfigError("bad channel configuration")
        if self.pyramid_levels < 1:
            raise ConfigError(f"pyramid_levels must be >= 1, got {self.pyramid_levels}")
        if self.cpm_layers != 4:
            raise ConfigError(f"the mapping head is fixed at 4 layers, got {self.cpm_layers}")
        if self.sr_blocks < 1 or self.cpm_hidden < 1:
            raise ConfigError("bad branch configuration")
        if self.input_size % 4 != 0:
            raise ConfigError(f"input_size must be divisible by 4, got {self.input_size}")
        if (self.input_size // 4) // (2 ** (self.pyramid_levels - 1)) < 1:
            raise ConfigError(
                f"pyramid_levels={self.pyramid_levels} bottoms out below 1 px "
                f"for input_size={self.input_size}"
            )


# ---------------------------------------------------------------------------
# coordinate law of the continuous mapping head
# ---------------------------------------------------------------------------


def cpm_output_size(hs, ws, p):
    if p <= 0:
        raise ConfigError(f"magnification must be positive, got {p}")
    out_h, out_w = int(hs * p), int(ws * p)
    if out_h < 1 or out_w < 1:
        raise ConfigError(f"magnification {p} empties a {hs}x{ws} grid")
    return out_h, out_w


def cpm_coords(hs, ws, p, dtype=np.float32):
    """Local relative coordinates [2, floor(hs*p), floor(ws*p)] in [-1, 1).

    Output pixel (i, j) has normalized position (i/H_out, j/W_out); its
    offset within the source cell of width 1/ws (height 1/hs) is rescaled to
    [-1, 1). Channel 0 is the x (column) coordinate, channel 1 the y (row)
    coordinate. Computed with integer remainders — mod(j/W_out, 1/ws)/(1/ws)
    equals (j*ws mod W_out)/W_out — so anchor pixels at integer p land on
    exactly -1.
    """
    out_h, out_w = cpm_output_size(hs, ws, p)
    zx = 2.0 * ((np.arange(out_w) * ws) % out_w) / out_w - 1.0
    zy = 2.0 * ((np.arange(out_h) * hs) % out_h) / out_h - 1.0
    grid = np.stack(
        [np.broadcast_to(zx[None, :], (out_h, out_w)), np.broadcast_to(zy[:, None], (out_h, out_w))]
    )
    return grid.astype(dtype)


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------


class _DownStage(Module):
    """Stride-2 3x3 conv then a refining 3x3 conv, leaky activations."""

    def __init__(self, cin, cout, rng, dtype):
        self.down = Conv2d(cin, cout, 3, rng, stride=2, padding=1, dtype=dtype)
        self.conv = Conv2d(cout, cout, 3, rng, dtype=dtype)

    def __call__(self, x):
        return leaky_relu(self.conv(leaky_relu(self.down(x))))


class SourceEncoder(Module):
    """base -> deep/2 -> deep at quarter resolution."""

    def __init__(self, base, deep, rng, dtype):
        self.stage1 = _DownStage(base, deep // 2, rng, dtype)
        self.stage2 = _DownStage(deep // 2, deep, rng, dtype)

    def __call__(self, x):
        return self.stage2(self.stage1(x))


class ReferenceEncoder(Module):
    """3-channel Lab reference -> deep features at quarter resolution."""

    def __init__(self, base, deep, rng, dtype):
        self.lift = Conv2d(3, base, 3, rng, dtype=dtype)
        self.stage1 = _DownStage(base, deep // 2, rng, dtype)
        self.stage2 = _DownStage(deep // 2, deep, rng, dtype)

    def __call__(self, x):
        return self.stage2(self.stage1(leaky_relu(self.lift(x))))


# valve bias at init: the source valve starts mostly open (sigmoid(2) ~ 0.88)
# and the transfer valve mostly closed (sigmoid(-1) ~ 0.27), so the
# referential path begins close to the automatic bypass and training opens
# the reference flow only where it helps
VALVE_SOURCE_BIAS = 2.0
VALVE_TRANSFER_BIAS = -1.0


class VCAttn(Module):
    """Cross attention from source queries to reference keys/values, with
    two sigmoid valve maps gating how much native vs transferred feature
    passes through: out = V1 * F_s + V2 * F_(r->s).

    ``force_valves`` replaces the learned valves with constants; it exists
    for gating tests and ablations.
    """

    def __init__(self, cs, qk, rng, dtype, cr=None):
        cr = cs if cr is None else cr
        self.q_proj = Conv2d(cs, qk, 1, rng, dtype=dtype)
        self.k_proj = Conv2d(cr, qk, 1, rng, dtype=dtype)
        self.v_proj = Conv2d(cr, cs, 1, rng, dtype=dtype)
        self.valve_proj = Conv2d(2 * cs, 2 * cs, 1, rng, dtype=dtype)
        bias = np.zeros(2 * cs, dtype=dtype)
        bias[:cs] = VALVE_SOURCE_BIAS
        bias[cs:] = VALVE_TRANSFER_BIAS
        self.valve_proj.bias = Tensor(bias, requires_grad=True)
        self.force_valves = None
        self.last_cmat = None
        self.last_valves = None

    def __call__(self, fs, fr):
        b, cs, hs, ws = fs.shape
        hr, wr = fr.shape[2], fr.shape[3]
        ns, nr = hs * ws, hr * wr
        q = transpose(reshape(self.q_proj(fs), (b, -1, ns)), (0, 2, 1))  # [B,Ns,qk]
        k = reshape(self.k_proj(fr), (b, -1, nr))  # [B,qk,Nr]
        cmat = softmax(matmul(q, k), axis=2)  # rows over reference positions
        v = reshape(self.v_proj(fr), (b, cs, nr))
        agg = reshape(matmul(v, transpose(cmat, (0, 2, 1))), (b, cs, hs, ws))
        self.last_cmat = cmat
        if self.force_valves is not None:
            v1, v2 = self.force_valves
            self.last_valves = None
            return fs * float(v1) + agg * float(v2)
        valves = sigmoid(self.valve_proj(concat_channels([fs, agg])))
        v1 = slice_channels(valves, 0, cs)
        v2 = slice_channels(valves, cs, 2 * cs)
        self.last_valves = valves
        return v1 * fs + v2 * agg


def _identity_conv1x1(conv, cin, cout, dtype):
    w = np.zeros((cout, cin, 1, 1), dtype=dtype)
    n = min(cin, cout)
    w[np.arange(n), np.arange(n), 0, 0] = 1.0
    conv.weight = Tensor(w, requires_grad=True)


class PVCAttn(Module):
    """Valve cross attention at ``levels`` dyadic scales.

    Each level pre-convolves both feature maps, pools them down by 2^k,
    runs VCAttn, and upsamples the result back; level outputs concatenate
    on channels and a 1x1 post-convolution restores the channel count.

    The pre/post 1x1 convolutions start as identities (the post conv picks
    the level-0 block), which together with the valve bias makes the whole
    module a near-pass-through of the source feature at step 0.
    """

    def __init__(self, ch, qk, levels, rng, dtype):
        self.pre_src = [Conv2d(ch, ch, 1, rng, dtype=dtype) for _ in range(levels)]
        self.pre_ref = [Conv2d(ch, ch, 1, rng, dtype=dtype) for _ in range(levels)]
        self.attn = [VCAttn(ch, qk, rng, dtype) for _ in range(levels)]
        self.post = Conv2d(levels * ch, ch, 1, rng, dtype=dtype)
        self.levels = levels
        for conv in self.pre_src + self.pre_ref:
            _identity_conv1x1(conv, ch, ch, dtype)
        _identity_conv1x1(self.post, levels * ch, ch, dtype)

    def __call__(self, fs, fr):
        hs, ws = fs.shape[2], fs.shape[3]
        if min(hs, ws) // (2 ** (self.levels - 1)) < 1:
            raise ConfigError(
                f"pyramid of {self.levels} levels bottoms out below 1 px on a {hs}x{ws} grid"
            )
        outs = []
        for k in range(self.levels):
            a = self.pre_src[k](fs)
            b = self.pre_ref[k](fr)
            for _ in range(k):
                a = avg_pool2x2(a)
                b = avg_pool2x2(b)
            t = self.attn[k](a, b)
            if k > 0:
                t = bilinear_resize(t, hs, ws)
            outs.append(t)
        merged = outs[0] if self.levels == 1 else concat_channels(outs)
        return self.post(merged)

    def force_valves(self, values):
        """Set (v1, v2) constants on every level; None restores learning."""
        for attn in self.attn:
            attn.force_valves = values


class SelfAttention2d(Module):
    """Single-feature-map attention with a learned mixing scalar.

    gamma starts at zero, so the layer is the identity until training
    moves it.
    """

    def __init__(self, ch, qk, rng, dtype):
        self.q_proj = Conv2d(ch, qk, 1, rng, dtype=dtype)
        self.k_proj = Conv2d(ch, qk, 1, rng, dtype=dtype)
        self.v_proj = Conv2d(ch, ch, 1, rng, dtype=dtype)
        self.gamma = Tensor(np.zeros((), dtype=dtype), requires_grad=True)

    def __call__(self, x):
        b, c, h, w = x.shape
        n = h * w
        q = transpose(reshape(self.q_proj(x), (b, -1, n)), (0, 2, 1))
        k = reshape(self.k_proj(x), (b, -1, n))
        att = softmax(matmul(q, k), axis=2)
        v = reshape(self.v_proj(x), (b, c, n))
        o = reshape(matmul(v, transpose(att, (0, 2, 1))), (b, c, h, w))
        return x + self.gamma * o


class ColorDecoder(Module):
    """Self-attention then two (upsample x2 + conv) stages back to full res."""

    def __init__(self, deep, base, qk, rng, dtype):
        self.attn = SelfAttention2d(deep, qk, rng, dtype)
        self.conv1 = Conv2d(deep, deep // 2, 3, rng, dtype=dtype)
        self.conv2 = Conv2d(deep // 2, base, 3, rng, dtype=dtype)

    def __call__(self, x):
        h, w = x.shape[2], x.shape[3]
        x = self.attn(x)
        x = leaky_relu(self.conv1(bilinear_resize(x, 2 * h, 2 * w)))
        x = leaky_relu(self.conv2(bilinear_resize(x, 4 * h, 4 * w)))
        return x


class BasicBlock(Module):
    """x + conv(act(conv(x))), 3x3 kernels, width preserved."""

    def __init__(self, ch, rng, dtype):
        self.conv1 = Conv2d(ch, ch, 3, rng, dtype=dtype)
        self.conv2 = Conv2d(ch, ch, 3, rng, dtype=dtype)

    def __call__(self, x):
        return x + self.conv2(leaky_relu(self.conv1(x)))


class TextureTrunk(Module):
    """Chain of residual basic blocks; the identity path carries the input
    feature through to the output, so zeroed convs pass it unchanged."""

    def __init__(self, ch, blocks, rng, dtype):
        self.blocks = [BasicBlock(ch, rng, dtype) for _ in range(blocks)]

    def __call__(self, x):
        for blk in self.blocks:
            x = blk(x)
        return x


class CPMHead(Module):
    """Continuous pixel mapping: per-output-pixel MLP over the corner-aligned
    resized fused feature plus the local relative coordinate pair."""

    def __init__(self, feat_ch, hidden, rng, dtype):
        self.l1 = Linear(feat_ch + 2, hidden, rng, dtype=dtype)
        self.l2 = Linear(hidden, hidden, rng, dtype=dtype)
        self.l3 = Linear(hidden, hidden, rng, dtype=dtype)
        self.l4 = Linear(hidden, 3, rng, dtype=dtype)
        self._dtype = dtype

    def __call__(self, fcs, p):
        b, c, hs, ws = fcs.shape
        out_h, out_w = cpm_output_size(hs, ws, p)
        main = bilinear_resize(fcs, out_h, out_w)
        coords = Tensor(
            np.broadcast_to(cpm_coords(hs, ws, p, self._dtype), (b, 2, out_h, out_w)).copy()
        )
        x = concat_channels([main, coords])
        x = transpose(reshape(x, (b, c + 2, out_h * out_w)), (0, 2, 1))
        x = leaky_relu(self.l1(x))
        x = leaky_relu(self.l2(x))
        x = leaky_relu(self.l3(x))
        x = self.l4(x)
        return reshape(transpose(x, (0, 2, 1)), (b, 3, out_h, out_w))


# ---------------------------------------------------------------------------
# the generator and discriminator
# ---------------------------------------------------------------------------


class Generator(Module):
    """Full network: gray LR source (+ optional Lab reference) -> Lab output
    at magnification p."""

    def __init__(self, config: SCSNetConfig, seed=0, dtype=np.float32):
        rng = derive_rng(seed, "gen")
        base, deep, qk = config.base_channels, config.deep_channels, config.attn_qk_channels
        self.init_conv = Conv2d(1, base, 3, rng, dtype=dtype)
        self.enc_src = SourceEncoder(base, deep, rng, dtype)
        self.enc_ref = ReferenceEncoder(base, deep, rng, dtype)
        self.pvcattn = PVCAttn(deep, qk, config.pyramid_levels, rng, dtype)
        self.decoder = ColorDecoder(deep, base, qk, rng, dtype)
        self.sr_trunk = TextureTrunk(base, config.sr_blocks, rng, dtype)
        self.fuse = Conv2d(2 * base, deep, 3, rng, dtype=dtype)
        self.cpm = CPMHead(deep, config.cpm_hidden, rng, dtype)
        self.config = config

    def __call__(self, source, reference=None, mode=Mode.AUTO, p=2.0):
        if mode is Mode.REF and reference is None:
            raise UsageError("referential mode requires a reference image")
        h, w = source.shape[2], source.shape[3]
        if source.shape[1] != 1:
            raise ConfigError(f"source must be single-channel, got {source.shape}")
        if h % 4 or w % 4:
            raise ConfigError(f"source dims must be divisible by 4, got {h}x{w}")
        f_init = self.init_conv(source)
        f_s = self.enc_src(f_init)
        if mode is Mode.REF:
            f_int = self.pvcattn(f_s, self.enc_ref(reference))
        else:
            f_int = f_s
        f_color = self.decoder(f_int)
        f_tex = self.sr_trunk(f_init)
        f_cs = self.fuse(concat_channels([f_tex, f_color]))
        return self.cpm(f_cs, p)

    def parameters_for_mode(self, mode: Mode):
        """Named parameters actually reachable in ``mode``'s graph."""
        skip = ("enc_ref.", "pvcattn.") if mode is Mode.AUTO else ()
        return {
            name: p for name, p in self.named_parameters() if not name.startswith(skip)
        }


class Discriminator(Module):
    """Four stride-2 convs, global average pool, linear logit (no final
    nonlinearity; the adversarial loss is least-squares)."""

    def __init__(self, seed=0, dtype=np.float32, widths=(32, 64, 128, 256)):
        rng = derive_rng(seed, "disc")
        chans = (3,) + tuple(widths)
        self.convs = [
            Conv2d(chans[i], chans[i + 1], 3, rng, stride=2, padding=1, dtype=dtype)
            for i in range(4)
        ]
        self.head = Linear(chans[-1], 1, rng, dtype=dtype)

    def __call__(self, x):
        for conv in self.convs:
            x = leaky_relu(conv(x))
        return self.head(reduce_mean(x, axis=(2, 3)))
