"""Patch-based training: Adam with single-cycle cosine annealing.

The full-scale regime (396k iterations, batch 16, 256px patches) is
what the reference results need; the default here is a 2k-iteration
toy regime that exercises the same loop at desk scale.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .archive import save_weights
from .autodiff import backward
from .errors import ContractViolation, TrainingDiverged
from .losses import total_loss

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    lr_init: float = 2e-4
    lr_final: float = 1e-6
    total_iters: int = 2000
    batch: int = 16
    patch: int = 256
    flips: bool = True
    seed: int = 0
    precision: str = "float32"
    checkpoint_path: str = ""
    checkpoint_every: int = 0  # 0 = save only when the loop finishes

    def __post_init__(self):
        if not self.lr_init > self.lr_final > 0:
            raise ContractViolation(
                f"need lr_init > lr_final > 0, got {self.lr_init} "
                f"and {self.lr_final}")
        if self.patch % 4:
            raise ContractViolation(f"patch {self.patch} not divisible by 4")
        if self.total_iters < 1 or self.batch < 1:
            raise ContractViolation("total_iters and batch must be >= 1")
        if self.precision not in ("float32", "float64"):
            raise ContractViolation(f"unknown precision {self.precision!r}")


def full_regime():
    """The complete training recipe; days of compute, provided as-is."""
    return TrainConfig(total_iters=396_000, batch=16, patch=256)


def cosine_lr(t, T, lr0=2e-4, lrT=1e-6):
    """Single-cycle cosine from lr0 at t=0 to lrT at t=T; t>T clamps."""
    if T < 1:
        raise ContractViolation(f"cosine_lr: T={T} < 1")
    if t < 0:
        raise ContractViolation(f"cosine_lr: t={t} < 0")
    if t > T:
        return lrT
    return lrT + 0.5 * (lr0 - lrT) * (1.0 + math.cos(math.pi * t / T))


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_variables(cls, variables, beta1=ADAM_BETA1, beta2=ADAM_BETA2,
                      eps=ADAM_EPS):
        state = cls(beta1=beta1, beta2=beta2, eps=eps)
        for var in variables:
            state.m[id(var)] = np.zeros_like(var.value)
            state.v[id(var)] = np.zeros_like(var.value)
        return state


def adam_step(variables, grads, state, lr):
    """Standard bias-corrected update, in place on the Variables."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for var, g in zip(variables, grads):
        if g.shape != var.value.shape:
            raise ContractViolation(
                f"adam_step: grad {g.shape} vs {var.name} {var.value.shape}")
        m = state.m[id(var)]
        v = state.v[id(var)]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        var.value -= (lr / c1) * m / (np.sqrt(v / c2) + state.eps)
    return state


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def sample_patch(pair, patch, rng, flips=True):
    """One aligned crop from a (blur, sharp) pair of (3, H, W) arrays.

    Both images get the identical crop window; horizontal and vertical
    flips are drawn independently with probability 0.5 each and applied
    to both.
    """
    blur, sharp = pair
    if blur.shape != sharp.shape:
        raise ContractViolation(
            f"sample_patch: blur {blur.shape} vs sharp {sharp.shape}")
    h, w = blur.shape[1], blur.shape[2]
    if h < patch or w < patch:
        raise ContractViolation(
            f"sample_patch: image {h}x{w} smaller than patch {patch}")
    i = int(rng.integers(0, h - patch + 1))
    j = int(rng.integers(0, w - patch + 1))
    b = blur[:, i:i + patch, j:j + patch]
    s = sharp[:, i:i + patch, j:j + patch]
    if flips:
        if rng.random() < 0.5:
            b, s = b[:, :, ::-1], s[:, :, ::-1]
        if rng.random() < 0.5:
            b, s = b[:, ::-1, :], s[:, ::-1, :]
    return np.ascontiguousarray(b), np.ascontiguousarray(s)


def _as_pairs(dataset):
    pairs = []
    for item in dataset:
        if len(item) == 3:  # (name, blur, sharp) from load_pair_dir
            item = item[1:]
        pairs.append((item[0], item[1]))
    if not pairs:
        raise ContractViolation("train: empty dataset")
    return pairs


# ---------------------------------------------------------------------------
# the loop
# ---------------------------------------------------------------------------

def train(model, dataset, config):
    """Run the loop; returns [(iteration, lr, LossReport), ...].

    Deterministic for a fixed config.seed and model. Aborts with the
    offending head named if the loss goes non-finite.
    """
    pairs = _as_pairs(dataset)
    rng = np.random.default_rng(config.seed)
    variables = list(model.variables())
    state = AdamState.for_variables(variables)
    history = []
    for it in range(config.total_iters):
        lr = cosine_lr(it, config.total_iters, config.lr_init,
                       config.lr_final)
        blurs, sharps = [], []
        for _ in range(config.batch):
            pair = pairs[int(rng.integers(0, len(pairs)))]
            b, s = sample_patch(pair, config.patch, rng, flips=config.flips)
            blurs.append(b)
            sharps.append(s)
        B = np.stack(blurs).astype(model.dtype)
        gt = np.stack(sharps).astype(model.dtype)

        outputs = model.forward(B, train_mode=True)
        report = total_loss(outputs, gt)
        if not np.isfinite(report.total):
            bad = [k for k, (c, f) in sorted(report.per_head.items())
                   if not (np.isfinite(c) and np.isfinite(f))]
            raise TrainingDiverged(
                f"non-finite loss at iteration {it}: head(s) {bad}, "
                f"cont={report.cont}, freq={report.freq}")
        for v in variables:
            v.zero_grad()
        backward(report.node)
        adam_step(variables, [v.grad for v in variables], state, lr)
        history.append((it, lr, report))

        if (config.checkpoint_path and config.checkpoint_every
                and (it + 1) % config.checkpoint_every == 0):
            save_weights(model, config.checkpoint_path)
    if config.checkpoint_path:
        save_weights(model, config.checkpoint_path)
    return history


def history_csv(history):
    """History as comma-separated rows: iteration, lr, cont, freq, total."""
    lines = ["iteration,lr,cont,freq,total"]
    for it, lr, rep in history:
        lines.append(f"{it},{lr:.10g},{rep.cont:.10g},{rep.freq:.10g},"
                     f"{rep.total:.10g}")
    return "\n".join(lines) + "\n"


def write_history(history, path):
    with open(path, "w") as f:
        f.write(history_csv(history))
