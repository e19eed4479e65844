"""Uncertainty models used in the case studies (powers in kW per phase)."""
import math

from .distributions import GMM, Beta4, Gaussian, PolynomialLogPdf

# power factor 0.95 -> Q/P
K_PF = math.tan(math.acos(0.95))

BETA = Beta4(alpha=1.6339, beta=20.9022, xmin=-0.1, xmax=8.268)
BETA_GMM = GMM(weights=(0.476, 0.152, 0.372), mus=(0.181, 1.223, 0.627), sigmas=(0.152, 0.467, 0.241))
BETA_GE = Gaussian(0.386, 0.305)
BETA_GA = Gaussian(0.505, 0.447)

# Support chosen so the polynomial's mean and standard deviation equal its
# tabulated Gaussian approximation (4.62, 1.66); see tools/poly_support.py.
POLY_SUPPORT = (1.506, 7.207)
POLY = PolynomialLogPdf((-0.080, 0.209, -0.086, 0.017, -0.001), *POLY_SUPPORT)
POLY_GMM = GMM(weights=(0.46, 0.54), mus=(3.0, 6.0), sigmas=(0.80, 0.70))
POLY_GE = Gaussian(6.0, 0.70)
POLY_GA = Gaussian(4.62, 1.66)

ORIGINALS = {
    "beta": {"exact": BETA, "gmm": BETA_GMM, "ge": BETA_GE, "ga": BETA_GA},
    "polynomial": {"exact": POLY, "gmm": POLY_GMM, "ge": POLY_GE, "ga": POLY_GA},
}
