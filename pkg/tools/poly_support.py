"""Solve for the support [xmin, xmax] of the tabulated log-pdf polynomial whose
first two moments equal the tabulated Gaussian approximation (4.62, 1.66)."""
import numpy as np
from scipy import integrate, optimize

COEFFS = (-0.080, 0.209, -0.086, 0.017, -0.001)
TARGET = (4.62, 1.66)


def moments(lo, hi):
    p = np.polynomial.Polynomial(COEFFS)
    z = integrate.quad(lambda x: np.exp(p(x)), lo, hi)[0]
    m = integrate.quad(lambda x: x * np.exp(p(x)), lo, hi)[0] / z
    v = integrate.quad(lambda x: (x - m) ** 2 * np.exp(p(x)), lo, hi)[0] / z
    return m, np.sqrt(v)


if __name__ == "__main__":
    sol = optimize.fsolve(lambda ab: np.subtract(moments(*ab), TARGET), [1.5, 7.5])
    print("support:", sol, "moments:", moments(*sol))
    print("rounded:", np.round(sol, 3), "moments:", moments(*np.round(sol, 3)))
