"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor

# A coordinate whose absolute error is below this floor passes outright;
# only larger deviations are measured relatively.
ABS_FLOOR = 1e-7


@dataclass
class GradCheckReport:
    max_rel_err: float
    max_abs_err: float

    def passed(self, rel_tol=1e-4):
        return self.max_rel_err <= rel_tol


def finite_diff_check(f, x: Tensor, h=1e-5) -> GradCheckReport:
    """Compare the analytic gradient of scalar-valued ``f`` at ``x`` against
    central differences (f(x + h e_i) - f(x - h e_i)) / 2h per coordinate.
    """
    x.zero_grad()
    out = f(x)
    out.backward()
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
    x.zero_grad()

    flat = x.data.reshape(-1)
    numeric = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = float(f(x).data)
        flat[i] = orig - h
        lo = float(f(x).data)
        flat[i] = orig
        numeric[i] = (hi - lo) / (2.0 * h)
    numeric = numeric.reshape(x.data.shape)

    abs_err = np.abs(analytic - numeric)
    denom = np.maximum(np.abs(analytic), np.abs(numeric))
    big = abs_err > ABS_FLOOR
    max_rel = float((abs_err[big] / denom[big]).max()) if big.any() else 0.0
    return GradCheckReport(max_rel_err=max_rel, max_abs_err=float(abs_err.max()))
