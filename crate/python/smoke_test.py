#!/usr/bin/env python3
"""Smoke test for the fracvar_py extension module.

Builds nothing itself: it looks for the compiled cdylib under
``target/{release,debug}`` (run ``cargo build -p fracvar-py`` first, or
``--release``), copies it next to a temp dir as ``fracvar_py.so`` and
imports it from there.
"""

import math
import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def load_module():
    candidates = [
        ROOT / "target" / profile / name
        for profile in ("release", "debug")
        for name in ("libfracvar_py.so", "fracvar_py.so", "libfracvar_py.dylib")
    ]
    built = next((p for p in candidates if p.exists()), None)
    if built is None:
        sys.exit("fracvar_py cdylib not found; run `cargo build -p fracvar-py` first")
    stage = Path(tempfile.mkdtemp(prefix="fracvar-py-"))
    shutil.copy2(built, stage / "fracvar_py.so")
    sys.path.insert(0, str(stage))
    import fracvar_py

    return fracvar_py


def approx(a, b, rel=1e-9, abs_tol=0.0):
    return abs(a - b) <= max(rel * max(abs(a), abs(b)), abs_tol)


def main():
    fv = load_module()

    # Special functions.
    assert approx(fv.gamma(5.0), 24.0, rel=1e-12)
    assert approx(fv.gamma(0.5), math.sqrt(math.pi), rel=1e-12)
    assert fv.rgamma(0.0) == 0.0
    try:
        fv.gamma(-2.0)
    except ValueError:
        pass
    else:
        raise AssertionError("gamma(-2) should raise")

    # Grünwald–Letnikov weights.
    w = fv.gl_weights(0.5, 3)
    assert w == [1.0, -0.5, -0.125, -0.0625], w

    # Discrete Caputo derivative of t^2 at alpha = 0.5.
    grid = fv.Grid(0.0, 10.0, 200)
    nodes = grid.nodes()
    assert len(nodes) == 201 and nodes[0] == 0.0 and nodes[-1] == 10.0
    x = [t * t for t in nodes]
    d = fv.caputo_left(grid, x, 0.5)
    coeff = 2.0 / fv.gamma(2.5)
    worst = max(
        abs(d[j] - coeff * nodes[j] ** 1.5) for j in range(1, len(nodes))
    )
    assert worst < 0.1, worst

    # Expression layer.
    assert "gammafn" in fv.normalize_expression("(d - 2/gammafn(2.5)*t^1.5)^2")
    try:
        fv.normalize_expression("x + nope")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown identifier should raise")

    # Direct solve of the first builtin problem.
    problem = fv.Problem.builtin("example1")
    assert problem.alpha == 0.5 and problem.b == 10.0
    sol = problem.solve(100)
    assert sol.converged and sol.iterations <= 2
    assert sol.values[0] == 0.0 and sol.values[-1] == 100.0
    dev = max(abs(v - t * t) for v, t in zip(sol.values, sol.nodes))
    assert approx(dev, 0.224165, rel=0.02), dev

    # The audit sees the solved trajectory as discretely stationary.
    residual = problem.residual(sol.values)
    assert residual.sup_norm_interior < 1e-6, residual.sup_norm_interior
    assert approx(problem.legendre(sol.values), 2.0, rel=1e-6)
    convex, margin = problem.convexity(500)
    assert convex and margin >= -1e-9

    # Custom problem with an isoperimetric constraint.
    constrained = fv.Problem(
        0.0, 1.0, 0.5, "d^2", x_a=0.0, x_b=1.0, isoperimetric=("x", 0.6)
    )
    sol = constrained.solve(40)
    assert sol.converged and sol.multiplier is not None
    h = 1.0 / 40
    g = h * sum(sol.values[1:])
    assert abs(g - 0.6) <= 1e-6, g
    audited = constrained.residual(sol.values, lambda_=sol.multiplier)
    assert audited.sup_norm_interior < 1e-6

    # Convergence study against the analytic minimizer.
    rows = fv.Problem.builtin("example1").convergence([25, 50, 100], "t^2")
    errors = [e for _, e in rows]
    assert errors[0] > errors[1] > errors[2], errors

    print("smoke test ok")


if __name__ == "__main__":
    main()
