"""Central finite-difference validation of autograd gradients.

The harness is the independent side of every differentiability check in the
package: the analytic gradient comes from the reverse-mode tape, the reference
from two-sided probes of the same scalar function.
"""

import math
from dataclasses import dataclass, field

import torch

from stp4d.errors import ConfigError, ProbeError
from stp4d.seeding import numpy_rng


@dataclass
class GradCheckReport:
    loss: float
    h: float
    max_rel_err: float
    worst_param: str
    per_param: dict[str, float] = field(default_factory=dict)
    probes: int = 0

    def ok(self, tol: float) -> bool:
        return math.isfinite(self.max_rel_err) and self.max_rel_err < tol


def _as_named(params) -> dict[str, torch.Tensor]:
    if isinstance(params, torch.nn.Module):
        return dict(params.named_parameters())
    return dict(params)


def gradient_check(
    fn,
    params,
    h: float = 1e-5,
    max_probes_per_tensor: int = 24,
    seed: int = 0,
) -> GradCheckReport:
    """Compare analytic gradients of ``fn()`` against central differences.

    ``fn`` must be a zero-argument callable returning a scalar tensor computed
    from ``params`` (a dict name -> tensor with requires_grad, or a module).
    Large tensors are probed at a seeded random subset of entries; the probe
    step perturbs a single entry by +-h.
    """
    if not (1e-6 <= h <= 1e-4):
        raise ConfigError(f"probe step h={h} outside [1e-6, 1e-4]")
    named = _as_named(params)
    for name, p in named.items():
        if not p.requires_grad:
            raise ConfigError(f"parameter {name!r} does not require grad")
        if p.grad is not None:
            p.grad = None

    loss = fn()
    if loss.ndim != 0:
        raise ProbeError("gradient_check expects a scalar loss")
    if not torch.isfinite(loss):
        raise ProbeError(f"non-finite loss at probe point: {loss.item()}")
    loss.backward()
    analytic = {
        name: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
        for name, p in named.items()
    }

    rng = numpy_rng(seed)
    report = GradCheckReport(loss=float(loss.detach()), h=h, max_rel_err=0.0, worst_param="")
    for name, p in named.items():
        flat = p.detach().reshape(-1)
        n = flat.numel()
        if n <= max_probes_per_tensor:
            idx = range(n)
        else:
            idx = sorted(rng.choice(n, size=max_probes_per_tensor, replace=False).tolist())
        worst = 0.0
        with torch.no_grad():
            for i in idx:
                orig = flat[i].item()
                flat[i] = orig + h
                up = fn()
                flat[i] = orig - h
                down = fn()
                flat[i] = orig
                if not (torch.isfinite(up) and torch.isfinite(down)):
                    raise ProbeError(f"non-finite loss while probing {name}[{i}]")
                fd = (up.item() - down.item()) / (2.0 * h)
                an = analytic[name].reshape(-1)[i].item()
                err = abs(fd - an) / (max(abs(fd), abs(an)) + 1e-6)
                worst = max(worst, err)
                report.probes += 1
        report.per_param[name] = worst
        if worst >= report.max_rel_err:
            report.max_rel_err = worst
            report.worst_param = name
    return report
