"""Training objective.

The loss is a sum over all output heads (the auxiliary images of every
non-final stage plus the final restored image) of a per-element L1 term
in image space and a per-element L1 term between unnormalized 2-D
spectra, weighted 1 : 0.1. Each head is compared against the ground
truth resized to that head's resolution with the same bilinear 0.5
downsampling the model itself uses for its input pyramid, so coarse
targets match coarse input statistics.
"""

from dataclasses import dataclass

import numpy as np

from .autodiff import add, add_scalars, constant, mean_abs, scale
from .errors import ContractViolation
from .fourier import dft2
from .layers import bilinear_resize

FREQ_WEIGHT = 0.1


# ---------------------------------------------------------------------------
# head gathering and target pyramid
# ---------------------------------------------------------------------------

def _gather_heads(outputs):
    """Ordered (key, prediction) pairs: aux heads first, final last."""
    keys = tuple(outputs.head_keys)
    if not keys:
        raise ContractViolation(
            "outputs carry no head list; run the model's forward pass")
    for key in keys[:-1]:
        if key not in outputs.aux:
            raise ContractViolation(
                f"auxiliary head {key} missing from outputs; "
                "run the forward pass with train_mode=True")
    extra = set(outputs.aux) - set(keys[:-1])
    if extra:
        raise ContractViolation(f"unexpected auxiliary heads: {sorted(extra)}")
    heads = [(key, outputs.aux[key]) for key in keys[:-1]]
    heads.append((keys[-1], outputs.final))
    return heads


class TargetPyramid:
    """Ground truth at the full resolution and lazily below it.

    Reusable across loss evaluations against the same ground truth; the
    downsampled planes and their spectra are computed once.
    """

    def __init__(self, L_gt, dtype):
        base = constant(np.asarray(L_gt, dtype=dtype))
        if base.value.ndim != 4:
            raise ContractViolation(
                f"ground truth must be (N, C, H, W), got {base.value.shape}")
        self._cache = {base.value.shape[2:]: base}
        self._spectra = {}
        self._base = base

    @property
    def full(self):
        return self._base

    def at(self, hw):
        if hw in self._cache:
            return self._cache[hw]
        t = self._base
        th, tw = hw
        while t.value.shape[2:] != (th, tw):
            h, w = t.value.shape[2], t.value.shape[3]
            if h <= th or w <= tw or h % 2 or w % 2:
                raise ContractViolation(
                    f"cannot resize ground truth {h}x{w} to head {th}x{tw}")
            t = bilinear_resize(t, 0.5)
            self._cache[t.value.shape[2:]] = t
        return t

    def spectrum(self, hw):
        if hw not in self._spectra:
            self._spectra[hw] = dft2(self.at(hw))
        return self._spectra[hw]


def _check_gt(outputs, targets):
    got = targets.full.value.shape
    want = outputs.final.value.shape
    if got != want:
        raise ContractViolation(
            f"ground truth shape {got} does not match output shape {want}")


def _content_term(pred, target):
    return mean_abs(pred, target)


def _frequency_term(pred, tspec):
    p = dft2(pred)
    return add(mean_abs(p.real, tspec.real), mean_abs(p.imag, tspec.imag))


def _resolve_targets(outputs, L_gt, targets):
    if targets is None:
        targets = TargetPyramid(L_gt, outputs.final.value.dtype)
    _check_gt(outputs, targets)
    return targets


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

@dataclass
class LossReport:
    """Scalar loss values plus per-head contributions.

    per_head maps each (scale, stage) key to (content, frequency); node
    is the differentiable graph handle for the total.
    """
    cont: float
    freq: float
    total: float
    per_head: dict
    node: object


def content_loss(outputs, L_gt, targets=None):
    """Sum over heads of the per-element mean |prediction - target|."""
    heads = _gather_heads(outputs)
    targets = _resolve_targets(outputs, L_gt, targets)
    terms = [_content_term(pred, targets.at(pred.value.shape[2:]))
             for _, pred in heads]
    return add_scalars(terms)


def frequency_loss(outputs, L_gt, targets=None):
    """Same head structure with L1 on unnormalized spectra.

    The distance per frequency bin is |d_real| + |d_imag|, averaged over
    the same element count as the image-space term.
    """
    heads = _gather_heads(outputs)
    targets = _resolve_targets(outputs, L_gt, targets)
    terms = [_frequency_term(pred, targets.spectrum(pred.value.shape[2:]))
             for _, pred in heads]
    return add_scalars(terms)


def total_loss(outputs, L_gt, freq_weight=FREQ_WEIGHT, targets=None):
    """content + freq_weight * frequency, with per-head diagnostics."""
    heads = _gather_heads(outputs)
    targets = _resolve_targets(outputs, L_gt, targets)
    per_head = {}
    cont_terms = []
    freq_terms = []
    for key, pred in heads:
        hw = pred.value.shape[2:]
        c = _content_term(pred, targets.at(hw))
        f = _frequency_term(pred, targets.spectrum(hw))
        per_head[key] = (float(c.item()), float(f.item()))
        cont_terms.append(c)
        freq_terms.append(f)
    cont = add_scalars(cont_terms)
    freq = add_scalars(freq_terms)
    total = add(cont, scale(freq, freq_weight))
    return LossReport(cont=float(cont.item()), freq=float(freq.item()),
                      total=float(total.item()), per_head=per_head,
                      node=total)
