"""Independent oracles shared by the test modules."""

import math

import numpy as np
import pytest


def bisect_gamma_inv(y: float, tol: float = 1e-15) -> float:
    """Root of ``x e^x / 2 = y`` by plain bisection on ``[0, max(1, 2y)]`` to relative ``tol``."""
    if y == 0:
        return 0.0
    lo, hi = 0.0, max(1.0, 2.0 * y)
    # relative stopping rule so tiny roots are resolved too
    for _ in range(400):
        if hi - lo <= tol * hi:
            break
        mid = 0.5 * (lo + hi)
        if 0.5 * mid * math.exp(mid) < y:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def rk4_flow_time(x0: float, x: float, lam: float, delta: float, dt: float = 1e-3) -> float:
    """Integrate ``x' = -x (delta + lam x)`` forward with RK4 until it falls to ``x``.

    The last partial step is found by bisection on the RK4 update.
    """
    f = lambda v: -v * (delta + lam * v)

    def step(v, h):
        k1 = f(v)
        k2 = f(v + h / 2 * k1)
        k3 = f(v + h / 2 * k2)
        k4 = f(v + h * k3)
        return v + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)

    t, v = 0.0, x0
    if x >= x0:
        return 0.0
    while True:
        nv = step(v, dt)
        if nv <= x:
            lo, hi = 0.0, dt
            for _ in range(80):
                mid = 0.5 * (lo + hi)
                if step(v, mid) > x:
                    lo = mid
                else:
                    hi = mid
            return t + 0.5 * (lo + hi)
        t += dt
        v = nv


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
