"""Central finite-difference verification of analytic gradients.

``grad_check`` perturbs every element of every trainable parameter and
compares (f(x+eps) - f(x-eps)) / (2 eps) against the gradient produced by
the tape.  The probe is a pure forward computation (recorded nowhere), so
it is independent of the backward rules it checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import GradCheckError
from .tensor import Tensor, backward, no_grad, reset_tape


@dataclass
class ParamCheck:
    """Per-parameter comparison result."""

    name: str
    frozen: bool
    n_elements: int
    max_rel_err: float = 0.0
    # (row, col, analytic, numeric, relative error) for flagged elements
    flagged: list[tuple[int, int, float, float, float]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.flagged


@dataclass
class GradCheckReport:
    checks: list[ParamCheck]
    eps: float
    tol: float

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def max_rel_err(self) -> float:
        active = [c.max_rel_err for c in self.checks if not c.frozen]
        return max(active) if active else 0.0

    def summary(self) -> str:
        lines = [f"{'parameter':<28} {'elements':>8} {'max rel err':>12}  status"]
        for c in self.checks:
            if c.frozen:
                lines.append(f"{c.name:<28} {c.n_elements:>8} {'-':>12}  frozen (no gradient)")
            else:
                status = "ok" if c.passed else f"FAIL ({len(c.flagged)} flagged)"
                lines.append(f"{c.name:<28} {c.n_elements:>8} {c.max_rel_err:>12.3e}  {status}")
        return "\n".join(lines)


def grad_check(
    fn: Callable[..., Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
    tol: float = 1e-5,
    names: Sequence[str] | None = None,
    rel_floor: float = 1e-4,
) -> GradCheckReport:
    """Compare tape gradients of ``fn(*params)`` against central differences.

    ``fn`` must be deterministic and return a 1x1 tensor.  Elements whose
    analytic and numeric gradients are both below ``rel_floor`` in
    magnitude are compared absolutely (at ``tol * rel_floor``), which keeps
    finite-difference roundoff from flagging near-zero gradients.  Frozen
    parameters (``requires_grad=False``) are reported but not compared:
    their gradient is contractually absent.

    Raises ``GradCheckError`` if the probed function value is non-finite.
    """
    params = list(params)
    if names is None:
        names = [f"param{i}" for i in range(len(params))]
    if len(names) != len(params):
        raise ValueError("names must parallel params")

    # analytic pass on a fresh tape
    reset_tape()
    for p in params:
        p.zero_grad()
    loss = fn(*params)
    base = loss.item()
    if not np.isfinite(base):
        reset_tape()
        raise GradCheckError(f"check aborted: function value {base} is not finite")
    backward(loss)
    analytic = [
        None if not p.requires_grad else (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
        for p in params
    ]
    for p in params:
        p.zero_grad()
    reset_tape()

    def probe(name: str, i: int, j: int) -> float:
        val = fn(*params).item()
        if not np.isfinite(val):
            raise GradCheckError(
                f"check aborted: non-finite value {val} while probing {name}[{i},{j}]"
            )
        return val

    checks = []
    with no_grad():
        for p, name, a in zip(params, names, analytic):
            if a is None:
                checks.append(ParamCheck(name=name, frozen=True, n_elements=p.data.size))
                continue
            check = ParamCheck(name=name, frozen=False, n_elements=p.data.size)
            h = p.dtype.type(eps)
            for i in range(p.rows):
                for j in range(p.cols):
                    orig = p.data[i, j]
                    p.data[i, j] = orig + h
                    f1 = probe(name, i, j)
                    p.data[i, j] = orig - h
                    f2 = probe(name, i, j)
                    p.data[i, j] = orig
                    num = (f1 - f2) / (2.0 * float(h))
                    ana = float(a[i, j])
                    rel = abs(ana - num) / max(abs(ana), abs(num), rel_floor)
                    if rel > check.max_rel_err:
                        check.max_rel_err = rel
                    if rel > tol:
                        check.flagged.append((i, j, ana, num, rel))
            checks.append(check)
    return GradCheckReport(checks=checks, eps=eps, tol=tol)
