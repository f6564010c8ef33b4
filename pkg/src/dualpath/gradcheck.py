"""Central finite-difference verification of autodiff gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, backward, zero_grad

__all__ = ["GradCheckEntry", "GradCheckReport", "finite_difference_check"]

# above this many coordinates per tensor, check a seeded random subsample
SUBSAMPLE_LIMIT = 256


@dataclass
class GradCheckEntry:
    name: str
    size: int
    checked: int
    max_rel_err: float
    max_abs_err: float

    def passed(self, tolerance: float) -> bool:
        return self.max_rel_err <= tolerance


@dataclass
class GradCheckReport:
    entries: list[GradCheckEntry]
    step: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return all(e.passed(self.tolerance) for e in self.entries)

    @property
    def worst(self) -> GradCheckEntry | None:
        return max(self.entries, key=lambda e: e.max_rel_err, default=None)

    def format_table(self) -> str:
        lines = [f"{'tensor':<36} {'size':>7} {'checked':>7} {'max rel err':>12}  status"]
        for e in self.entries:
            status = "ok" if e.passed(self.tolerance) else "FAIL"
            lines.append(f"{e.name:<36} {e.size:>7} {e.checked:>7} {e.max_rel_err:>12.3e}  {status}")
        lines.append(f"tolerance {self.tolerance:.1e}, step {self.step:.1e}: "
                     f"{'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def finite_difference_check(
    f,
    params: dict[str, Tensor],
    step: float = 1e-5,
    tolerance: float = 1e-4,
    seed: int = 0,
    max_coords: int = SUBSAMPLE_LIMIT,
) -> GradCheckReport:
    """Compare autodiff gradients of ``f()`` against central differences.

    ``f`` evaluates the scalar loss from the current parameter values and is
    called repeatedly while coordinates are perturbed in place. Per tensor the
    error is max_i |ad_i - fd_i| relative to the largest gradient magnitude
    seen in that tensor (floor 1e-12), which keeps the report meaningful for
    coordinates whose true gradient is ~0.
    """
    if step <= 0:
        raise ValueError("finite difference step must be > 0")
    zero_grad(params.values())
    loss = f()
    backward(loss)
    analytic = {name: p.grad.copy() for name, p in params.items()}

    rng = np.random.default_rng(seed)
    entries = []
    for name, p in params.items():
        flat = p.data.reshape(-1)
        n = flat.size
        if n > max_coords:
            coords = np.sort(rng.choice(n, size=max_coords, replace=False))
        else:
            coords = np.arange(n)
        ad = analytic[name].reshape(-1)
        fd = np.empty(len(coords))
        for j, i in enumerate(coords):
            orig = flat[i]
            flat[i] = orig + step
            f_plus = f().item()
            flat[i] = orig - step
            f_minus = f().item()
            flat[i] = orig
            fd[j] = (f_plus - f_minus) / (2.0 * step)
        diff = np.abs(ad[coords] - fd)
        scale = max(np.abs(ad[coords]).max(initial=0.0), np.abs(fd).max(initial=0.0), 1e-12)
        entries.append(GradCheckEntry(
            name=name,
            size=n,
            checked=len(coords),
            max_rel_err=float(diff.max(initial=0.0) / scale),
            max_abs_err=float(diff.max(initial=0.0)),
        ))
    return GradCheckReport(entries=entries, step=step, tolerance=tolerance)
