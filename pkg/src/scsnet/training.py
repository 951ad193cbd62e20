"""Losses, optimizer, checkpoint format, and the alternating train loop.

The generator objective is 10 * content + 5 * perceptual + 1 * adversarial.
Perceptual distance is measured through a fixed, seeded multi-scale conv
stack rather than a pretrained classifier, keeping the build hermetic and
deterministic; it still enforces feature agreement at five scales.

The relativistic least-squares adversarial pair is implemented exactly as

    L_G = E_x[(D(x) - E[D(x~)] - 1)^2] + E_x~[(D(x~) - E[D(x)])^2]
    L_D = E_x~[(D(x~) - E[D(x)] - 1)^2]

with an optional symmetric-discriminator variant behind a flag.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tape, Tensor, abs_mean, leaky_relu, reduce_mean, square, sub
from .errors import DataError, NumericalError
from .imaging import make_pair, stack_pairs
from .model import Discriminator, Generator, Mode, SCSNetConfig
from .nn import Conv2d, Module, parameter_map
from .seeding import derive_rng


@dataclass
class LossWeights:
    lambda_content: float = 10.0
    lambda_perceptual: float = 5.0
    lambda_adversarial: float = 1.0
    perceptual: tuple = (1 / 32, 1 / 16, 1 / 8, 1 / 4, 1.0)

    def __post_init__(self):
        if len(self.perceptual) != 5:
            raise ValueError(f"need exactly 5 perceptual weights, got {len(self.perceptual)}")
        values = (self.lambda_content, self.lambda_perceptual, self.lambda_adversarial)
        if any(v <= 0 for v in values) or any(w <= 0 for w in self.perceptual):
            raise ValueError("loss weights must be positive")


# ---------------------------------------------------------------------------
# fixed multi-scale feature extractor
# ---------------------------------------------------------------------------


def _orthogonal(rng, rows, cols):
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return q[:rows, :cols]


class SurrogateFeatureNet(Module):
    """Five frozen stride-2 conv stages (3->16->32->64->128->128).

    Weights are orthogonally initialized from a seed and never trained;
    gradients still flow through the stack to its input.
    """

    WIDTHS = (16, 32, 64, 128, 128)

    def __init__(self, seed=0, dtype=np.float32):
        rng = derive_rng(seed, "surrogate")
        gain = math.sqrt(2.0 / (1.0 + 0.04))
        chans = (3,) + self.WIDTHS
        self.stages = []
        for i in range(5):
            conv = Conv2d(chans[i], chans[i + 1], 3, rng, stride=2, padding=1, dtype=dtype)
            w = _orthogonal(rng, chans[i + 1], chans[i] * 9) * gain
            conv.weight = Tensor(w.reshape(chans[i + 1], chans[i], 3, 3).astype(dtype))
            conv.bias = Tensor(np.zeros(chans[i + 1], dtype=dtype))
            self.stages.append(conv)

    def features(self, x):
        acts = []
        for conv in self.stages:
            x = leaky_relu(conv(x))
            acts.append(x)
        return acts


# ---------------------------------------------------------------------------
# loss terms
# ---------------------------------------------------------------------------


def content_loss(pred, target):
    """Mean absolute error over all elements."""
    if pred.shape != target.shape:
        raise ValueError(f"content_loss shape mismatch: {pred.shape} vs {target.shape}")
    return abs_mean(sub(pred, target))


def perceptual_terms(pred, target, net: SurrogateFeatureNet):
    """Unweighted mean-abs feature distance per stage (5 scalars)."""
    fp = net.features(pred)
    ft = net.features(target)
    return [abs_mean(sub(a, b)) for a, b in zip(fp, ft)]


def perceptual_loss(pred, target, net, weights: LossWeights = None):
    weights = weights or LossWeights()
    terms = perceptual_terms(pred, target, net)
    total = terms[0] * weights.perceptual[0]
    for w, t in zip(weights.perceptual[1:], terms[1:]):
        total = total + t * w
    return total


def adversarial_losses(d_real, d_fake, symmetric_d=False):
    """Relativistic least-squares pair from logits of real/generated batches."""
    mean_real = reduce_mean(d_real)
    mean_fake = reduce_mean(d_fake)
    loss_g = reduce_mean(square(d_real - mean_fake - 1.0)) + reduce_mean(
        square(d_fake - mean_real)
    )
    if symmetric_d:
        loss_d = reduce_mean(square(d_real - mean_fake - 1.0)) + reduce_mean(
            square(d_fake - mean_real + 1.0)
        )
    else:
        loss_d = reduce_mean(square(d_fake - mean_real - 1.0))
    return loss_g, loss_d


def total_loss(content, perceptual, adv_g, weights: LossWeights = None):
    weights = weights or LossWeights()
    return (
        content * weights.lambda_content
        + perceptual * weights.lambda_perceptual
        + adv_g * weights.lambda_adversarial
    )


# ---------------------------------------------------------------------------
# Adam with decoupled weight decay
# ---------------------------------------------------------------------------


@dataclass
class AdamConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4


class OptimState:
    """Per-parameter (m, v, t); step counters advance per update."""

    def __init__(self):
        self.moments = {}

    def entry(self, name, like):
        if name not in self.moments:
            self.moments[name] = [np.zeros_like(like), np.zeros_like(like), 0]
        return self.moments[name]


class GradientMissingError(NumericalError):
    """A parameter expected in the graph received no gradient."""


def adam_step(params: dict, state: OptimState, cfg: AdamConfig):
    """Bias-corrected Adam update; weight decay applied decoupled.

    Every parameter in ``params`` must carry a gradient — a missing one
    means the graph silently dropped a trainable tensor.
    """
    for name, p in params.items():
        if p.grad is None:
            raise GradientMissingError(f"no gradient for trainable parameter '{name}'")
        ent = state.entry(name, p.data)
        ent[2] += 1
        t = ent[2]
        g = p.grad.astype(p.data.dtype, copy=False)
        ent[0] = cfg.beta1 * ent[0] + (1 - cfg.beta1) * g
        ent[1] = cfg.beta2 * ent[1] + (1 - cfg.beta2) * (g * g)
        m_hat = ent[0] / (1 - cfg.beta1**t)
        v_hat = ent[1] / (1 - cfg.beta2**t)
        update = cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
        # rebind, never mutate: saved activations may still reference p.data
        p.data = (p.data - update - cfg.lr * cfg.weight_decay * p.data).astype(
            p.data.dtype, copy=False
        )


# ---------------------------------------------------------------------------
# checkpoint container: b"SCS1", u32 version, u32 header length,
# UTF-8 JSON header (tensor table + metadata), little-endian f32 payload
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"SCS1"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, tensors: dict, meta: dict):
    entries = []
    blobs = []
    offset = 0
    for name, arr in tensors.items():
        blob = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        entries.append(
            {"name": name, "dtype": "f32", "shape": list(np.shape(arr)), "offset": offset}
        )
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps({"meta": meta, "tensors": entries}).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise DataError(f"{path}: not a checkpoint (bad magic {blob[:4]!r})")
    version = struct.unpack("<I", blob[4:8])[0]
    if version != CHECKPOINT_VERSION:
        raise DataError(
            f"{path}: checkpoint version {version} unsupported (expected {CHECKPOINT_VERSION})"
        )
    hlen = struct.unpack("<I", blob[8:12])[0]
    header = json.loads(blob[12 : 12 + hlen].decode("utf-8"))
    payload = blob[12 + hlen :]
    tensors = {}
    for ent in header["tensors"]:
        count = int(np.prod(ent["shape"])) if ent["shape"] else 1
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=ent["offset"])
        tensors[ent["name"]] = arr.reshape(ent["shape"]).astype(np.float32)
    return tensors, header["meta"]


def _pack_state(gen, disc, g_state, d_state, meta):
    tensors = {}
    for name, p in parameter_map(gen).items():
        tensors[f"gen/{name}"] = p.data
    for name, p in parameter_map(disc).items():
        tensors[f"disc/{name}"] = p.data
    for tag, state in (("g", g_state), ("d", d_state)):
        for name, (m, v, t) in state.moments.items():
            tensors[f"opt/{tag}/m/{name}"] = m
            tensors[f"opt/{tag}/v/{name}"] = v
            tensors[f"opt/{tag}/t/{name}"] = np.array(float(t), dtype=np.float32)
    return tensors, meta


def _unpack_state(tensors, gen, disc, g_state, d_state):
    for name, p in parameter_map(gen).items():
        p.data = tensors[f"gen/{name}"].astype(p.data.dtype)
    for name, p in parameter_map(disc).items():
        p.data = tensors[f"disc/{name}"].astype(p.data.dtype)
    for tag, state in (("g", g_state), ("d", d_state)):
        prefix = f"opt/{tag}/m/"
        for key, arr in tensors.items():
            if key.startswith(prefix):
                name = key[len(prefix) :]
                state.moments[name] = [
                    arr.copy(),
                    tensors[f"opt/{tag}/v/{name}"].copy(),
                    int(tensors[f"opt/{tag}/t/{name}"]),
                ]


# ---------------------------------------------------------------------------
# train loop
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    checkpoints: list
    log_lines: list
    final_step: int


LOG_HEADER = "step,mode,L_C,L_P,L_advG,L_advD,total"


def _batch_tensors(batch, dtype=np.float32):
    src = Tensor(batch.source.astype(dtype))
    ref = Tensor(batch.reference.astype(dtype)) if batch.reference is not None else None
    tgt = Tensor(batch.target.astype(dtype))
    return src, ref, tgt


def _step_mode(policy, step):
    if policy == "auto":
        return Mode.AUTO
    if policy == "ref":
        return Mode.REF
    return Mode.AUTO if (step - 1) % 2 == 0 else Mode.REF


def train_loop(cfg, images, ckpt_dir, resume=False, log_file=None):
    """Alternating-mode adversarial training over ``images``.

    Per step: one discriminator update on the printed relativistic loss,
    then one generator update on the weighted total. All randomness (batch
    order, reference augmentation) is derived from (seed, step), so resuming
    from a checkpoint reproduces the continuation bit for bit. Aborts on a
    non-finite total loss.
    """
    from .config import RunConfig  # noqa: F401  (documents the expected cfg shape)

    ckpt_dir = Path(ckpt_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    if len(images) == 0:
        raise DataError("training dataset is empty")

    model_cfg = cfg.model_config()
    weights = cfg.loss_weights()
    adam_cfg = cfg.adam_config()
    gen = Generator(model_cfg, seed=cfg.seed)
    disc = Discriminator(seed=cfg.seed)
    surrogate = SurrogateFeatureNet(seed=cfg.seed)
    g_state, d_state = OptimState(), OptimState()
    disc_params = parameter_map(disc)

    start_step = 0
    if resume:
        latest = latest_checkpoint(ckpt_dir)
        if latest is None:
            raise DataError(f"no checkpoint to resume from in {ckpt_dir}")
        tensors, meta = load_checkpoint(latest)
        _unpack_state(tensors, gen, disc, g_state, d_state)
        start_step = int(meta["step"])

    batch = max(1, cfg.batch_size)
    steps_per_epoch = len(images) // batch
    if steps_per_epoch == 0:
        raise DataError(
            f"batch size {batch} exceeds dataset size {len(images)}"
        )
    total_steps = cfg.epochs * steps_per_epoch
    if cfg.max_steps:
        total_steps = min(total_steps, cfg.max_steps)

    log_lines = []
    checkpoints = []
    log_fh = open(log_file, "a", encoding="utf-8") if log_file else None

    def emit(line):
        log_lines.append(line)
        if log_fh:
            log_fh.write(line + "\n")
            log_fh.flush()

    if start_step == 0:
        emit(LOG_HEADER)

    try:
        for step in range(start_step + 1, total_steps + 1):
            mode = _step_mode(cfg.mode, step)
            epoch = (step - 1) // steps_per_epoch
            slot = (step - 1) % steps_per_epoch
            order = derive_rng(cfg.seed, "order", epoch).permutation(len(images))
            idx = order[slot * batch : (slot + 1) * batch]
            pairs = [
                make_pair(
                    images[i],
                    cfg.scale,
                    with_reference=(mode is Mode.REF),
                    seed=(cfg.seed, step, int(i)),
                )
                for i in idx
            ]
            src, ref, tgt = _batch_tensors(stack_pairs(pairs))

            # discriminator update (generated batch detached by construction)
            fake0 = gen(src, ref, mode, cfg.scale)
            with Tape():
                d_real = disc(tgt)
                d_fake = disc(Tensor(fake0.data))
                _, loss_d = adversarial_losses(d_real, d_fake, cfg.symmetric_d_loss)
                loss_d.backward()
            adam_step(disc_params, d_state, adam_cfg)
            disc.zero_grad()

            # generator update against the refreshed discriminator
            with Tape():
                pred = gen(src, ref, mode, cfg.scale)
                l_c = content_loss(pred, tgt)
                l_p = perceptual_loss(pred, tgt, surrogate, weights)
                d_real2 = disc(tgt)
                d_fake2 = disc(pred)
                l_g, _ = adversarial_losses(d_real2, d_fake2, cfg.symmetric_d_loss)
                loss = total_loss(l_c, l_p, l_g, weights)
                if not np.isfinite(loss.item()):
                    raise NumericalError(f"non-finite total loss at step {step}")
                loss.backward()
            adam_step(gen.parameters_for_mode(mode), g_state, adam_cfg)
            gen.zero_grad()
            disc.zero_grad()

            emit(
                f"{step},{mode.value},{l_c.item():.6f},{l_p.item():.6f},"
                f"{l_g.item():.6f},{loss_d.item():.6f},{loss.item():.6f}"
            )

            if step % cfg.checkpoint_interval == 0 or step == total_steps:
                meta = {"step": step, "seed": cfg.seed, "config": cfg.to_dict()}
                tensors, meta = _pack_state(gen, disc, g_state, d_state, meta)
                path = ckpt_dir / f"ckpt_{step:06d}.scs"
                save_checkpoint(path, tensors, meta)
                checkpoints.append(path)
    finally:
        if log_fh:
            log_fh.close()

    return TrainResult(checkpoints, log_lines, total_steps)


def latest_checkpoint(ckpt_dir):
    paths = sorted(Path(ckpt_dir).glob("ckpt_*.scs"))
    return paths[-1] if paths else None


def load_generator(ckpt_path):
    """Rebuild a generator (and its config) from a checkpoint file."""
    from .config import RunConfig

    tensors, meta = load_checkpoint(ckpt_path)
    cfg = RunConfig.from_dict(meta["config"])
    gen = Generator(cfg.model_config(), seed=cfg.seed)
    for name, p in parameter_map(gen).items():
        key = f"gen/{name}"
        if key not in tensors:
            raise DataError(f"checkpoint missing tensor {key}")
        if tuple(tensors[key].shape) != tuple(p.data.shape):
            raise DataError(
                f"checkpoint tensor {key} has shape {tensors[key].shape}, model expects {p.data.shape}"
            )
        p.data = tensors[key]
    return gen, cfg, meta
