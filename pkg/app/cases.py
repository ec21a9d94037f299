"""
Manufactured test cases on the unit square with analytic gradients, sources
and Hessians.

    u1: boundary layer at x = 0
        u = 4 (1 - exp(-100 x) - x (1 - exp(-100))) y (1 - y)
    u2: circular wave front of steepness alpha
        u = arctan(alpha (r - r0)), r measured from (-0.05, -0.05), r0 = 0.7
    sine: smooth reference solution sin(pi x) sin(pi y)
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Tuple

import numpy as np

from .fem import ProblemSpec

Func = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass
class TestCase:
    """Exact solution data of a manufactured problem."""
    __test__ = False

    name: str
    exact: Func
    gradient: Callable[[np.ndarray, np.ndarray], Tuple[np.ndarray, np.ndarray]]
    source: Func
    hessian: Callable[[np.ndarray, np.ndarray], Tuple[np.ndarray, np.ndarray, np.ndarray]]
    params: Dict[str, float] = field(default_factory=dict)

    def problem(self) -> ProblemSpec:
        return ProblemSpec(source=self.source, dirichlet=self.exact)


def case_u1() -> TestCase:
    """Boundary-layer solution with f = -laplace(u) derived analytically."""
    k = 100.0
    c = 1.0 - math.exp(-k)

    def a(x):
        return 1.0 - np.exp(-k * x) - x * c

    def da(x):
        return k * np.exp(-k * x) - c

    def d2a(x):
        return -k * k * np.exp(-k * x)

    def b(y):
        return y * (1.0 - y)

    def exact(x, y):
        return 4.0 * a(x) * b(y)

    def gradient(x, y):
        return 4.0 * da(x) * b(y), 4.0 * a(x) * (1.0 - 2.0 * y)

    def source(x, y):
        return 4.0 * (k * k * np.exp(-k * x) * b(y) + 2.0 * a(x))

    def hessian(x, y):
        return (4.0 * d2a(x) * b(y),
                4.0 * da(x) * (1.0 - 2.0 * y),
                -8.0 * a(x))

    return TestCase("u1", exact, gradient, source, hessian, {"k": k})


def case_u2(alpha: float = 100.0, r0: float = 0.7, shift: float = 0.05) -> TestCase:
    """Circular wave front arctan(alpha (r - r0))."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")

    def radial(x, y):
        dx, dy = x + shift, y + shift
        r = np.hypot(dx, dy)
        z = alpha * (r - r0)
        du = alpha / (1.0 + z * z)
        d2u = -2.0 * alpha * alpha * z / (1.0 + z * z) ** 2
        return dx, dy, r, z, du, d2u

    def exact(x, y):
        r = np.hypot(x + shift, y + shift)
        return np.arctan(alpha * (r - r0))

    def gradient(x, y):
        dx, dy, r, _, du, _ = radial(x, y)
        return du * dx / r, du * dy / r

    def source(x, y):
        _, _, r, _, du, d2u = radial(x, y)
        return -(d2u + du / r)

    def hessian(x, y):
        dx, dy, r, _, du, d2u = radial(x, y)
        nx, ny = dx / r, dy / r
        t = du / r
        return (d2u * nx * nx + t * (1.0 - nx * nx),
                (d2u - t) * nx * ny,
                d2u * ny * ny + t * (1.0 - ny * ny))

    return TestCase("u2", exact, gradient, source, hessian,
                    {"alpha": alpha, "r0": r0, "shift": shift})


def case_sine() -> TestCase:
    """Smooth solution sin(pi x) sin(pi y)."""
    pi = math.pi

    def exact(x, y):
        return np.sin(pi * x) * np.sin(pi * y)

    def gradient(x, y):
        return pi * np.cos(pi * x) * np.sin(pi * y), pi * np.sin(pi * x) * np.cos(pi * y)

    def source(x, y):
        return 2.0 * pi * pi * np.sin(pi * x) * np.sin(pi * y)

    def hessian(x, y):
        s = -pi * pi * np.sin(pi * x) * np.sin(pi * y)
        return s, pi * pi * np.cos(pi * x) * np.cos(pi * y), s

    return TestCase("sine", exact, gradient, source, hessian)


def get_case(name: str, alpha: float = 100.0) -> TestCase:
    if name == "u1":
        return case_u1()
    if name == "u2":
        return case_u2(alpha)
    if name == "sine":
        return case_sine()
    raise ValueError(f"Unknown test case: {name}")


def _five_point_laplacian(u: Func, x: np.ndarray, y: np.ndarray, h: float) -> np.ndarray:
    return (u(x + h, y) + u(x - h, y) + u(x, y + h) + u(x, y - h) - 4.0 * u(x, y)) / h ** 2


def check_source(case: TestCase, points: np.ndarray, step: float = 1e-4) -> float:
    """
    Largest difference between the source and a finite-difference Laplacian
    of the exact solution at the given points, relative to the largest
    source magnitude among them.

    The five-point Laplacian at steps h and 2h is Richardson-extrapolated,
    which leaves an O(h^4) truncation error. A step large enough to keep
    round-off small then still resolves the u1 layer and the default u2 front;
    steeper fronts need a smaller step.
    """
    x, y = points[:, 0], points[:, 1]
    u = case.exact
    fine = _five_point_laplacian(u, x, y, step)
    coarse = _five_point_laplacian(u, x, y, 2.0 * step)
    lap = (4.0 * fine - coarse) / 3.0
    f = case.source(x, y)
    scale = max(float(np.max(np.abs(f))), 1.0)
    return float(np.max(np.abs(f + lap)) / scale)
