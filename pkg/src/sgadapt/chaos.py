"""Orthonormal polynomial families on [-1,1] and multi-index machinery.

Univariate polynomials are generated by the symmetric three-term recurrence

    beta[n] * P[n+1](y) = y * P[n](y) - beta[n-1] * P[n-1](y)

with P0 = 1, P(-1) = 0 and beta[-1] = 1; the coefficients are produced by a
Stieltjes procedure with composite Gauss-Legendre quadrature against the
measure density.  Multi-indices are stored as tuples with trailing zeros
trimmed, ordered by total degree then lexicographically.
"""

import math

import numpy as np

from .errors import NumericError


class UniformMeasure:
    """Uniform probability measure on [-1,1] (orthonormal Legendre family)."""

    name = "uniform"
    gram_tol = 1e-10

    def density(self, y):
        return np.full_like(np.asarray(y, dtype=float), 0.5)


class TruncatedGaussianMeasure:
    """Standard normal restricted to [-1,1] and renormalized."""

    name = "truncated_gaussian"
    gram_tol = 1e-8

    def __init__(self):
        # mass of N(0,1) on [-1,1]
        self.normalizer = math.erf(1.0 / math.sqrt(2.0))

    def density(self, y):
        y = np.asarray(y, dtype=float)
        return np.exp(-0.5 * y * y) / (math.sqrt(2.0 * math.pi) * self.normalizer)

    def std(self):
        """Closed-form standard deviation of the truncated variable."""
        phi1 = math.exp(-0.5) / math.sqrt(2.0 * math.pi)
        return math.sqrt(1.0 - 2.0 * phi1 / self.normalizer)


def _panel_rule(n_panels, n_nodes):
    """Composite Gauss-Legendre rule on [-1,1]."""
    x, w = np.polynomial.legendre.leggauss(n_nodes)
    edges = np.linspace(-1.0, 1.0, n_panels + 1)
    h = np.diff(edges) / 2.0
    mid = (edges[:-1] + edges[1:]) / 2.0
    nodes = (mid[:, None] + h[:, None] * x[None, :]).ravel()
    weights = (h[:, None] * w[None, :]).ravel()
    return nodes, weights


class RecurrenceTable:
    """Recurrence coefficients beta[0..n_max] for one measure."""

    def __init__(self, measure, betas):
        self.measure = measure
        self.betas = np.asarray(betas, dtype=float)
        self.n_max = len(self.betas) - 1
        if np.any(self.betas <= 0):
            raise NumericError("non-positive recurrence coefficient")

    def eval_poly(self, n, y):
        """P_n(y) by forward recurrence (vectorized in y)."""
        if n > self.n_max:
            raise ValueError(f"degree {n} exceeds table size {self.n_max}")
        y = np.asarray(y, dtype=float)
        p_prev = np.zeros_like(y)
        p = np.ones_like(y)
        for k in range(n):
            p, p_prev = (y * p - (self.betas[k - 1] if k else 1.0) * p_prev) \
                / self.betas[k], p
        return p

    def coupling(self, nu_m, mu_m):
        """Integral of y * P_{nu_m}(y) * P_{mu_m}(y) against the measure."""
        if mu_m == nu_m + 1:
            return float(self.betas[nu_m])
        if nu_m == mu_m + 1:
            return float(self.betas[mu_m])
        return 0.0


def recurrence(measure, n_max):
    """Stieltjes procedure for the first n_max+1 recurrence coefficients.

    The composite quadrature is refined (panel doubling) until every
    coefficient is stable to 1e-13; non-convergence raises NumericError.
    """
    if n_max < 0:
        raise ValueError("n_max must be nonnegative")

    def run(n_panels):
        nodes, weights = _panel_rule(n_panels, max(2 * n_max + 16, 32))
        w = weights * measure.density(nodes)
        betas = np.empty(n_max + 1)
        p_prev = np.zeros_like(nodes)
        p = np.ones_like(nodes)
        norm0 = w.sum()
        p = p / math.sqrt(norm0)  # exact orthonormalization of P0 under quadrature
        for n in range(n_max + 1):
            beta_prev = betas[n - 1] if n else 1.0
            q = nodes * p - beta_prev * p_prev
            betas[n] = math.sqrt(float(w @ (q * q)))
            if betas[n] <= 0 or not np.isfinite(betas[n]):
                raise NumericError(f"Stieltjes breakdown at degree {n}")
            p, p_prev = q / betas[n], p
        return betas, norm0

    panels, prev = 1, None
    for _ in range(12):
        betas, norm0 = run(panels)
        if abs(norm0 - 1.0) > 1e-9:
            panels *= 2
            prev = None
            continue
        if prev is not None and np.max(np.abs(betas - prev)) < 1e-13:
            return RecurrenceTable(measure, betas)
        prev = betas
        panels *= 2
    raise NumericError("Stieltjes quadrature did not stabilize "
                       f"(last panel count {panels})")


# ---------------------------------------------------------------------------
# multi-indices

ZERO_INDEX = ()


def trim(nu):
    """Canonical form: tuple with trailing zeros removed."""
    nu = tuple(int(v) for v in nu)
    while nu and nu[-1] == 0:
        nu = nu[:-1]
    if any(v < 0 for v in nu):
        raise ValueError(f"negative entry in multi-index {nu}")
    return nu


def grlex_key(nu):
    return (sum(nu), nu)


def sort_indices(indices):
    return sorted({trim(nu) for nu in indices}, key=grlex_key)


def index_support(nu):
    """Active parameter numbers (1-based) of a multi-index."""
    return {m + 1 for m, v in enumerate(nu) if v > 0}


def active_count(indices):
    """Number of active parameters M of an index set.

    Zero when the set is just the zero index; otherwise the largest active
    parameter number over the nonzero indices.
    """
    m = 0
    for nu in indices:
        if nu:
            m = max(m, len(trim(nu)))
    return m


def index_neighbors(nu, m_range):
    """All nu +- e_m with nonnegative entries for 1 <= m <= m_range."""
    nu = trim(nu)
    out = []
    for m in range(1, m_range + 1):
        padded = list(nu) + [0] * max(0, m - len(nu))
        up = padded.copy()
        up[m - 1] += 1
        out.append(trim(up))
        if padded[m - 1] > 0:
            down = padded.copy()
            down[m - 1] -= 1
            out.append(trim(down))
    return out


def detail_index_set(index_set, m_bar):
    """Neighbor indices of the set within the active-parameter cap.

    Returns the indices nu +- e_m not already present, for m up to
    M + m_bar where M is the number of active parameters.
    """
    if m_bar < 1:
        raise ValueError("m_bar must be at least 1")
    base = {trim(nu) for nu in index_set}
    if ZERO_INDEX not in base:
        raise ValueError("index set must contain the zero index")
    m_range = active_count(base) + m_bar
    found = set()
    for nu in base:
        found.update(index_neighbors(nu, m_range))
    return sort_indices(found - base)


def format_index(nu, width=None):
    """Parenthesized form, e.g. ``(1 0 1 0)``."""
    nu = trim(nu)
    width = max(width or 0, len(nu), 1)
    entries = list(nu) + [0] * (width - len(nu))
    return "(" + " ".join(str(v) for v in entries) + ")"


def parse_index(text):
    inner = text.strip()
    if not (inner.startswith("(") and inner.endswith(")")):
        raise ValueError(f"malformed index literal: {text!r}")
    return trim(int(t) for t in inner[1:-1].split())
