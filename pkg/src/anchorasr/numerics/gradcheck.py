"""Central finite-difference verification of tape gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .tensor import Tape, Tensor


class NonDeterministicLossError(RuntimeError):
    pass


@dataclass
class ParamCheck:
    name: str
    checked: int
    max_rel_error: float
    worst_index: tuple[int, ...]
    analytic: float
    numeric: float
    failed: int = 0


@dataclass
class GradCheckReport:
    tolerance: float
    epsilon: float
    resolution: float = 0.0
    params: list[ParamCheck] = field(default_factory=list)

    @property
    def max_rel_error(self) -> float:
        return max((p.max_rel_error for p in self.params), default=0.0)

    @property
    def failed(self) -> int:
        return sum(p.failed for p in self.params)

    @property
    def passed(self) -> bool:
        return self.failed == 0

    def lines(self) -> list[str]:
        out = [
            f"{p.name}\t{p.checked}\t{p.max_rel_error:.3e}\t{p.analytic:.6e}\t{p.numeric:.6e}"
            for p in self.params
        ]
        verdict = "PASS" if self.passed else "FAIL"
        out.append(f"max_rel_error\t{self.max_rel_error:.3e}\tfailed={self.failed}\t{verdict}")
        return out


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)


def fd_resolution(loss_value: float, epsilon: float, ulps: float = 16.0) -> float:
    """Absolute gradient error explained by rounding in two loss evaluations."""
    return ulps * np.spacing(max(abs(loss_value), 1.0)) / (2.0 * epsilon)


def grad_check(
    loss_fn: Callable[[Mapping[str, Tensor]], Tensor],
    params: Mapping[str, Tensor],
    epsilon: float = 1e-5,
    tolerance: float = 1e-4,
    max_per_param: int | None = None,
    seed: int = 0,
    resolution: float = 0.0,
) -> GradCheckReport:
    """Compare tape gradients of ``loss_fn(params)`` with central differences.

    ``max_per_param`` limits how many scalars of each tensor are perturbed
    (chosen with a seeded generator); ``None`` checks every scalar.

    A scalar fails when its relative error reaches ``tolerance``, unless the
    absolute gap is within ``resolution`` (0 disables the allowance).
    """
    if not 0.0 < epsilon <= 1e-3:
        raise ValueError("epsilon must lie in (0, 1e-3]")

    def value() -> float:
        return float(loss_fn(params).data.reshape(-1)[0])

    first, second = value(), value()
    if first != second:
        raise NonDeterministicLossError(
            f"loss_fn returned {first!r} then {second!r} for identical parameters"
        )

    with Tape() as tape:
        loss = loss_fn(params)
    analytic = tape.gradients(loss, params)

    rng = np.random.default_rng(seed)
    report = GradCheckReport(tolerance=tolerance, epsilon=epsilon, resolution=resolution)
    for name, t in params.items():
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_per_param is not None and flat.size > max_per_param:
            idx = np.sort(rng.choice(flat.size, size=max_per_param, replace=False))
        worst = (0.0, 0, 0.0, 0.0)
        failed = 0
        for k in idx:
            orig = flat[k]
            flat[k] = orig + epsilon
            up = value()
            flat[k] = orig - epsilon
            down = value()
            flat[k] = orig
            numeric = (up - down) / (2.0 * epsilon)
            a = float(analytic[name].reshape(-1)[k])
            err = relative_error(a, numeric)
            if err >= tolerance and abs(a - numeric) > resolution:
                failed += 1
            if err >= worst[0]:
                worst = (err, int(k), a, numeric)
        report.params.append(
            ParamCheck(
                name=name,
                checked=len(idx),
                max_rel_error=worst[0],
                worst_index=tuple(int(i) for i in np.unravel_index(worst[1], t.shape)),
                analytic=worst[2],
                numeric=worst[3],
                failed=failed,
            )
        )
    return report
