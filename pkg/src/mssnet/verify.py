"""Numerical gradient verification.

Compares the tape's gradients against central finite differences on a
random subsample of elements per Variable. Runs in 64-bit; the model
under test is rebuilt in float64 regardless of its training dtype. The
ground truth is shifted away from the prediction so the probes stay on
one side of the L1 kinks.
"""

from dataclasses import dataclass, field

import numpy as np

from .autodiff import backward, no_grad
from .errors import ContractViolation
from .losses import TargetPyramid, total_loss
from .model import build_model

DEFAULT_EPS = 1e-6


@dataclass
class GradCheckReport:
    passed: bool
    n_variables: int
    n_elements: int
    worst_name: str
    worst_rel: float
    failures: list = field(default_factory=list)

    def summary(self):
        state = "PASS" if self.passed else "FAIL"
        lines = [
            f"gradcheck: {self.n_variables} variables, "
            f"{self.n_elements} elements probed",
            f"worst relative error {self.worst_rel:.3e} at {self.worst_name}",
        ]
        for name, idx, ana, num, rel in self.failures[:10]:
            lines.append(
                f"  FAIL {name}[{idx}]: analytic {ana:.6e} "
                f"vs numeric {num:.6e} (rel {rel:.3e})")
        if len(self.failures) > 10:
            lines.append(f"  ... and {len(self.failures) - 10} more")
        lines.append(state)
        return "\n".join(lines)


def check_variables(variables, make_loss, tol=1e-4, samples=10, seed=0,
                    eps=DEFAULT_EPS):
    """Probe each Variable at `samples` random elements.

    make_loss() must rebuild the forward graph from the Variables'
    current values and return a scalar node. Each probe's relative
    error is |analytic - numeric| / max(|analytic|, |numeric|, floor)
    with floor = 1e-3, so elements whose gradient sits below the
    finite-difference noise floor cannot produce spurious failures; a
    probe fails when that error exceeds tol.
    """
    variables = list(variables)
    if not variables:
        raise ContractViolation("check_variables: no Variables to probe")
    for v in variables:
        v.zero_grad()
    backward(make_loss())
    grads = {id(v): v.grad.copy() for v in variables}

    rng = np.random.default_rng(seed)
    floor = 1e-3
    failures = []
    worst_name, worst_rel = "", 0.0
    n_elements = 0
    for v in variables:
        flat = v.value.reshape(-1)
        k = min(samples, flat.size)
        idxs = rng.choice(flat.size, size=k, replace=False)
        ana_flat = grads[id(v)].reshape(-1)
        for idx in idxs:
            orig = flat[idx]
            with no_grad():
                flat[idx] = orig + eps
                up = float(make_loss().item())
                flat[idx] = orig - eps
                dn = float(make_loss().item())
                flat[idx] = orig
            num = (up - dn) / (2.0 * eps)
            ana = float(ana_flat[idx])
            rel = abs(ana - num) / max(abs(ana), abs(num), floor)
            if rel > worst_rel:
                worst_name, worst_rel = v.name, rel
            if rel > tol:
                failures.append((v.name, int(idx), ana, num, rel))
            n_elements += 1
    return GradCheckReport(passed=not failures,
                           n_variables=len(variables),
                           n_elements=n_elements,
                           worst_name=worst_name,
                           worst_rel=worst_rel,
                           failures=failures)


def check_gradients(config, input=None, tol=1e-4, samples=10, seed=0):
    """End-to-end check of a model built from `config`, in float64.

    The full training objective (content plus weighted frequency terms
    over every head) is differentiated, so all layer types and the
    spectral ops sit on the probed path.
    """
    model = build_model(config, seed=seed, dtype=np.float64)
    rng = np.random.default_rng(seed + 1)
    if input is None:
        input = rng.uniform(0.3, 0.7, size=(1, 3, 16, 16))
    B = np.asarray(input, dtype=np.float64)
    # a uniform shift keeps |prediction - target| clear of zero almost
    # everywhere, so the central differences straddle no L1 kink
    gt = B - 0.3
    targets = TargetPyramid(gt, np.float64)

    def make_loss():
        out = model.forward(B, train_mode=True)
        return total_loss(out, gt, targets=targets).node

    return check_variables(model.variables(), make_loss, tol=tol,
                           samples=samples, seed=seed)
