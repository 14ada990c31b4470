import numpy as np
import pytest

from mfglab.expressions import Expr, ExpressionError


def test_polynomial_values_and_derivatives():
    e = Expr.parse("1 + 2*x1 - x2 + x1*x2 + 3*x2**2", 2)
    x = np.array([[0.5, -1.0], [2.0, 3.0]])
    expect = 1 + 2 * x[:, 0] - x[:, 1] + x[:, 0] * x[:, 1] + 3 * x[:, 1] ** 2
    np.testing.assert_allclose(e(x), expect)
    g = e.grad(x)
    np.testing.assert_allclose(g[:, 0], 2 + x[:, 1])
    np.testing.assert_allclose(g[:, 1], -1 + x[:, 0] + 6 * x[:, 1])


@pytest.mark.parametrize("text,fn", [
    ("0.5*tanh(2*x1 - 1)", lambda x: 0.5 * np.tanh(2 * x - 1)),
    ("sin(x1) + cos(3*x1)", lambda x: np.sin(x) + np.cos(3 * x)),
    ("2*gauss(x1/2)", lambda x: 2 * np.exp(-(x / 2) ** 2)),
])
def test_bumps(text, fn):
    e = Expr.parse(text, 1)
    x = np.linspace(-2, 2, 11)[:, None]
    np.testing.assert_allclose(e(x), fn(x[:, 0]), rtol=1e-13, atol=1e-14)
    h = 1e-6
    fd = (e(x + h) - e(x - h)) / (2 * h)
    np.testing.assert_allclose(e.grad(x)[:, 0], fd, atol=1e-7)


@pytest.mark.parametrize("text", ["x1**3", "exp(x1)", "y + 1", "tanh(x1**2)", "1/x1"])
def test_rejects_unsupported(text):
    with pytest.raises(ExpressionError):
        Expr.parse(text, 1)


def test_squared_distance():
    e = Expr.squared_distance([1.0, -2.0])
    assert e(np.array([[1.0, -2.0]]))[0] == 0.0
    assert e(np.array([[0.0, 0.0]]))[0] == pytest.approx(5.0)


def test_bounds_on_box():
    lo, hi = Expr.parse("(x1 - 1)**2", 1).bounds([-1.0], [2.0])
    assert lo == pytest.approx(0.0, abs=1e-3) and hi == pytest.approx(4.0)
