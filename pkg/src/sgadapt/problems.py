"""Built-in parametric diffusion problems on square, L-shaped and slit domains.

Three coefficient families are provided:

* a Karhunen-Loeve expansion of a random field with separable exponential
  covariance on the square (1D eigenpairs from the classical transcendental
  equations, tensorized and sorted by decreasing eigenvalue);
* planar cosine modes with algebraically decaying amplitudes on the L-shape;
* a rescaled variant of the cosine expansion on the slit domain.

Each builder returns an AdaptiveProblem ready for the adaptive loop.
"""

import math

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq
from scipy.special import zeta

from .adapt import AdaptiveProblem, MarkingParams
from .assembly import (CharacteristicRegion, CoefficientExpansion,
                       FunctionalSpec)
from .chaos import TruncatedGaussianMeasure, UniformMeasure, recurrence
from .errors import NumericError
from .mesh import load_asset, uniform_refine


# ---------------------------------------------------------------------------
# Karhunen-Loeve expansion, separable exponential covariance on [-1,1]^2

def _exp_kernel_eigenpairs_1d(corr_length, count):
    """Eigenpairs of the exponential-covariance integral operator on [-1,1].

    Returns (omegas, lambdas, kinds) sorted by increasing frequency, where
    kind 'even' denotes the cosine family and 'odd' the sine family.
    """
    c = 1.0 / corr_length
    eps = 1e-13
    out = []
    k = 0
    while len(out) < count:
        # cosine root in (k pi, k pi + pi/2):  c - w tan(w) = 0
        lo, hi = k * math.pi + eps, k * math.pi + math.pi / 2 - eps
        try:
            w = brentq(lambda w: c - w * math.tan(w), lo, hi, xtol=1e-14,
                       rtol=8.9e-16)
        except ValueError as exc:
            raise NumericError(f"even-mode bracket failed at k={k}") from exc
        out.append((w, "even"))
        # sine root in (k pi + pi/2, (k+1) pi):  w + c tan(w) = 0
        lo, hi = k * math.pi + math.pi / 2 + eps, (k + 1) * math.pi - eps
        try:
            w = brentq(lambda w: w + c * math.tan(w), lo, hi, xtol=1e-14,
                       rtol=8.9e-16)
        except ValueError as exc:
            raise NumericError(f"odd-mode bracket failed at k={k}") from exc
        out.append((w, "odd"))
        k += 1
    out = out[:count]
    omegas = np.array([w for w, _ in out])
    lambdas = 2.0 * c / (omegas ** 2 + c ** 2)
    kinds = [kind for _, kind in out]
    return omegas, lambdas, kinds


def _eigenfunction_1d(omega, kind):
    """Normalized eigenfunction and its sup-norm on [-1,1]."""
    s = math.sin(2.0 * omega) / (2.0 * omega)
    if kind == "even":
        norm = math.sqrt(1.0 + s)
        fn = lambda t: np.cos(omega * t) / norm
        sup = 1.0 / norm
    else:
        norm = math.sqrt(1.0 - s)
        fn = lambda t: np.sin(omega * t) / norm
        # all sine roots exceed pi/2, so |sin| attains 1 inside [-1,1]
        sup = 1.0 / norm
    return fn, sup


def kl_expansion(sigma_std, l1, l2, mean, n_terms=100, scale=1.0):
    """Tensorized KL expansion of the exponential-covariance field.

    ``scale`` multiplies the fluctuations (set to 1/beta0 of the parameter
    measure so the scaled variables have unit variance).
    """
    if sigma_std <= 0 or l1 <= 0 or l2 <= 0:
        raise ValueError("standard deviation and correlation lengths "
                         "must be positive")
    om1, lam1, kind1 = _exp_kernel_eigenpairs_1d(l1, n_terms)
    om2, lam2, kind2 = _exp_kernel_eigenpairs_1d(l2, n_terms)

    prods = lam1[:, None] * lam2[None, :]
    # decreasing eigenvalue; deterministic (i, j) tie-break for equal products
    pairs = sorted(((i, j) for i in range(n_terms) for j in range(n_terms)),
                   key=lambda ij: (-prods[ij], ij))[:n_terms]

    fields = [float(mean)]
    sups = []
    eigenvalues = []
    for i, j in pairs:
        f1, s1 = _eigenfunction_1d(om1[i], kind1[i])
        f2, s2 = _eigenfunction_1d(om2[j], kind2[j])
        amp = scale * sigma_std * math.sqrt(prods[i, j])
        fields.append(lambda x, f1=f1, f2=f2, amp=amp:
                      amp * f1(x[:, 0]) * f2(x[:, 1]))
        sups.append(amp * s1 * s2)
        eigenvalues.append(prods[i, j])
    expansion = CoefficientExpansion(fields, mean, mean, sups)
    expansion.kl_eigenvalues = np.array(eigenvalues)
    return expansion


# ---------------------------------------------------------------------------
# planar cosine modes of increasing total order

def fourier_mode_orders(m):
    """Frequency pair of the m-th planar cosine mode (m >= 1)."""
    k = int(math.floor(-0.5 + math.sqrt(0.25 + 2.0 * m)))
    b1 = m - k * (k + 1) // 2
    b2 = k - b1
    return b1, b2


def cosine_expansion(amplitude, sigma_decay, n_terms=100):
    """Cosine-mode expansion with amplitudes A * m^(-sigma) and unit mean."""
    if sigma_decay <= 1:
        raise ValueError("decay exponent must exceed 1")
    if not 0.0 < amplitude < 1.0 / zeta(sigma_decay):
        raise ValueError("amplitude must lie in (0, 1/zeta(decay))")
    fields = [1.0]
    sups = []
    for m in range(1, n_terms + 1):
        b1, b2 = fourier_mode_orders(m)
        amp = amplitude * m ** (-float(sigma_decay))
        fields.append(lambda x, b1=b1, b2=b2, amp=amp:
                      amp * np.cos(2 * np.pi * b1 * x[:, 0])
                      * np.cos(2 * np.pi * b2 * x[:, 1]))
        sups.append(amp)
    tau = amplitude * float(zeta(sigma_decay))
    return CoefficientExpansion(fields, 1.0, 1.0, sups, tau=tau)


def slit_expansion(c, eps, sigma_decay, amplitude, n_terms=100):
    """Rescaled cosine expansion with mean c + eps and range [eps, 2c + eps]."""
    if c <= 0 or eps <= 0:
        raise ValueError("c and eps must be positive")
    base = cosine_expansion(amplitude, sigma_decay, n_terms)
    alpha_min = amplitude * float(zeta(sigma_decay))
    factor = c / alpha_min
    fields = [c + eps]
    sups = []
    for m in range(1, n_terms + 1):
        inner = base.coefficient(m)
        fields.append(lambda x, inner=inner, factor=factor: factor * inner(x))
        sups.append(factor * base.sup_norms[m - 1])
    tau = c / (c + eps)
    return CoefficientExpansion(fields, c + eps, c + eps, sups, tau=tau)


# ---------------------------------------------------------------------------
# goal functionals

_BUMP_MASS = None


def _unit_bump_mass():
    """Integral of exp(-1/(1-|u|^2)) over the unit disk."""
    global _BUMP_MASS
    if _BUMP_MASS is None:
        val, err = quad(lambda s: math.exp(-1.0 / s), 0.0, 1.0,
                        epsabs=1e-15, epsrel=1e-13)
        if err > 1e-11:
            raise NumericError("bump normalization quadrature failed")
        _BUMP_MASS = math.pi * val
    return _BUMP_MASS


def mollifier(center, radius):
    """Normalized smooth bump supported on the ball around ``center``.

    Returns ``(g0, C)`` where g0 integrates to one over the plane.
    """
    center = np.asarray(center, dtype=float)
    if radius <= 0:
        raise ValueError("radius must be positive")
    C = 1.0 / (radius ** 2 * _unit_bump_mass())

    def g0(x):
        d2 = ((np.atleast_2d(x) - center) ** 2).sum(axis=1)
        r2 = radius ** 2
        out = np.zeros(len(d2))
        inside = d2 < r2
        out[inside] = C * np.exp(-r2 / (r2 - d2[inside]))
        return out

    return g0, C


def mollifier_goal(tri, center, radius):
    """Goal functional from a mollifier strictly inside the domain."""
    center = np.asarray(center, dtype=float)
    boundary = tri.edges[tri.boundary_edge_mask]
    p0 = tri.vertices[boundary[:, 0]]
    p1 = tri.vertices[boundary[:, 1]]
    d = p1 - p0
    t = np.clip(((center - p0) * d).sum(axis=1) / (d * d).sum(axis=1), 0.0, 1.0)
    closest = p0 + t[:, None] * d
    dist = np.sqrt(((closest - center) ** 2).sum(axis=1)).min()
    if dist <= radius:
        raise ValueError(f"mollifier support (radius {radius}) touches the "
                         f"boundary (distance {dist:.4f})")
    g0, _ = mollifier(center, radius)
    return FunctionalSpec(scalar=g0)


# ---------------------------------------------------------------------------
# the three built-in experiment configurations

def _refined_asset(name, refinements):
    tri = load_asset(name)
    for _ in range(refinements):
        tri, _ = uniform_refine(tri)
    return tri


def experiment1(theta_x=0.5, theta_p=0.9, m_bar=1, tol=1e-4,
                max_iterations=100, sigma=0.15, l1=2.0, l2=2.0, mean=2.0,
                n_terms=50, initial_refinements=1):
    """Square domain, KL coefficient, truncated Gaussian parameters.

    Primal and goal functionals are averaged x1-derivatives over the two
    corner triangles of the initial mesh.  The truncation stays at 50
    terms: the sup-norm series of this expansion grows without bound, and
    beyond ~70 terms the uniform-ellipticity ratio would exceed one while
    adaptive runs never activate more than a dozen parameters.
    """
    tri = _refined_asset("square", initial_refinements)
    measure = TruncatedGaussianMeasure()
    scale = 1.0 / recurrence(measure, 0).betas[0]
    expansion = kl_expansion(sigma, l1, l2, mean, n_terms=n_terms, scale=scale)
    t_f = CharacteristicRegion([(-1, -1), (0, -1), (-1, 0)])
    t_g = CharacteristicRegion([(1, 1), (0, 1), (1, 0)])
    t_f.element_mask(tri)
    t_g.element_mask(tri)
    return AdaptiveProblem(
        name="experiment1",
        mesh=tri,
        expansion=expansion,
        measure=measure,
        primal_spec=FunctionalSpec(regions=[(t_f, (1.0, 0.0))]),
        goal_spec=FunctionalSpec(regions=[(t_g, (1.0, 0.0))]),
        defaults=MarkingParams(theta_x=theta_x, theta_p=theta_p, m_bar=m_bar,
                               tol=tol, max_iterations=max_iterations),
    )


def experiment2(sigma_decay=2, tau=0.9, theta_x=0.3, theta_p=0.8, m_bar=1,
                tol=1.5e-4, max_iterations=100, n_terms=100,
                initial_refinements=1):
    """L-shaped domain, cosine-mode coefficient, uniform parameters."""
    amplitude = tau / float(zeta(sigma_decay))
    tri = _refined_asset("lshape", initial_refinements)
    expansion = cosine_expansion(amplitude, sigma_decay, n_terms=n_terms)
    t_g = CharacteristicRegion([(0.5, -1), (1, -1), (1, -0.5)])
    t_g.element_mask(tri)
    return AdaptiveProblem(
        name=f"experiment2_sigma{sigma_decay}",
        mesh=tri,
        expansion=expansion,
        measure=UniformMeasure(),
        primal_spec=FunctionalSpec(scalar=1.0),
        goal_spec=FunctionalSpec(regions=[(t_g, (1.0, 0.0))]),
        defaults=MarkingParams(theta_x=theta_x, theta_p=theta_p, m_bar=m_bar,
                               tol=tol, max_iterations=max_iterations),
    )


def experiment3(c=0.1, eps=5e-3, sigma_decay=2, amplitude=0.6,
                goal_center=(0.4, -0.5), goal_radius=0.15, theta_x=0.3,
                theta_p=0.8, m_bar=1, tol=1e-3, max_iterations=100,
                n_terms=100, initial_refinements=2):
    """Slit domain, rescaled cosine coefficient, mollified point value goal."""
    tri = _refined_asset("slit", initial_refinements)
    expansion = slit_expansion(c, eps, sigma_decay, amplitude, n_terms=n_terms)
    return AdaptiveProblem(
        name="experiment3",
        mesh=tri,
        expansion=expansion,
        measure=UniformMeasure(),
        primal_spec=FunctionalSpec(scalar=1.0),
        goal_spec=mollifier_goal(tri, goal_center, goal_radius),
        defaults=MarkingParams(theta_x=theta_x, theta_p=theta_p, m_bar=m_bar,
                               tol=tol, max_iterations=max_iterations),
    )


PROBLEMS = {
    "experiment1": experiment1,
    "experiment2": experiment2,
    "experiment3": experiment3,
}


def build_problem(name, **overrides):
    if name not in PROBLEMS:
        raise ValueError(f"unknown problem {name!r}; choose from "
                         f"{sorted(PROBLEMS)}")
    return PROBLEMS[name](**overrides)
