"""Multinomial, Dirichlet and Categorical primitives over K action classes.

Vectors are plain 1-D numpy arrays. The ``as_*`` helpers validate them
against the invariants of the three vector kinds used throughout the
package:

* action distribution: non-negative, sums to 1 within ``SIMPLEX_ATOL``
* concentration vector: strictly positive
* count vector: non-negative integers

All densities are returned in log space.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DimensionError, DomainError

SIMPLEX_ATOL = 1e-9
CONCENTRATION_FLOOR = 1e-6

RngState = np.random.Generator


def make_rng(seed: int) -> RngState:
    """Seeded generator; the same seed and call sequence give the same draws."""
    return np.random.Generator(np.random.PCG64(int(seed) & 0xFFFFFFFFFFFFFFFF))


def as_probs(probs) -> np.ndarray:
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise DimensionError(f"action distribution must be a non-empty vector, got shape {p.shape}")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise DomainError(f"action distribution has negative or non-finite entries: {p}")
    if abs(math.fsum(p) - 1.0) > SIMPLEX_ATOL:
        raise DomainError(f"action distribution does not sum to 1 (sum={math.fsum(p)!r})")
    return p


def as_alpha(alpha) -> np.ndarray:
    a = np.asarray(alpha, dtype=np.float64)
    if a.ndim != 1 or a.size == 0:
        raise DimensionError(f"concentration must be a non-empty vector, got shape {a.shape}")
    if not np.all(np.isfinite(a)) or np.any(a <= 0):
        raise DomainError(f"concentration entries must be finite and > 0: {a}")
    return a


def as_counts(counts) -> np.ndarray:
    raw = np.asarray(counts)
    if raw.ndim != 1 or raw.size == 0:
        raise DimensionError(f"counts must be a non-empty vector, got shape {raw.shape}")
    c = raw.astype(np.int64)
    if not np.array_equal(c, raw) or np.any(c < 0):
        raise DomainError(f"counts must be non-negative integers: {raw}")
    return c


def concentration(values, floor: float = CONCENTRATION_FLOOR) -> np.ndarray:
    """Build a concentration vector, flooring every entry at ``floor``.

    Policies may assign exactly zero probability to an action, which a
    Dirichlet cannot represent.
    """
    if floor <= 0:
        raise DomainError("concentration floor must be > 0")
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise DimensionError(f"concentration must be a non-empty vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)) or np.any(v < 0):
        raise DomainError(f"concentration source must be finite and >= 0: {v}")
    return np.maximum(v, floor)


def _check_same_length(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")


def log_multinomial_pmf(counts, probs) -> float:
    """ln P(X = counts) for a Multinomial with ``sum(counts)`` trials.

    Returns ``-inf`` when a positive count falls on a zero-probability class.
    """
    c = as_counts(counts)
    p = as_probs(probs)
    _check_same_length(c, p)
    if np.any((p == 0) & (c > 0)):
        return -math.inf
    n = int(c.sum())
    terms = [math.lgamma(n + 1)]
    for ci, pi in zip(c.tolist(), p.tolist()):
        if ci:
            terms.append(ci * math.log(pi) - math.lgamma(ci + 1))
    return math.fsum(terms)


def log_multivariate_beta(alpha) -> float:
    """ln B(alpha) = sum(lnGamma(alpha_i)) - lnGamma(sum(alpha))."""
    a = as_alpha(alpha).tolist()
    return math.fsum([math.lgamma(x) for x in a]) - math.lgamma(math.fsum(a))


def log_dirichlet_pdf(x, alpha) -> float:
    """ln f(x; alpha) of the Dirichlet density.

    Boundary points are allowed; a zero coordinate gives ``-inf`` when its
    alpha exceeds 1 and ``+inf`` when it is below 1.
    """
    a = as_alpha(alpha)
    xv = as_probs(x)
    _check_same_length(xv, a)
    terms = [-log_multivariate_beta(a)]
    for xi, ai in zip(xv.tolist(), a.tolist()):
        if ai == 1.0:
            continue
        if xi == 0.0:
            return -math.inf if ai > 1.0 else math.inf
        terms.append((ai - 1.0) * math.log(xi))
    return math.fsum(terms)


def conjugate_update(alpha, counts) -> np.ndarray:
    """Posterior concentration alpha + counts of a Dirichlet-Multinomial pair."""
    a = as_alpha(alpha)
    c = as_counts(counts)
    _check_same_length(a, c)
    return a + c


def _log_gamma_variates(alpha: np.ndarray, rng: RngState) -> np.ndarray:
    # Shapes below 1 use Gamma(a) = Gamma(a + 1) * U**(1/a) in log space so
    # tiny concentrations do not underflow to an all-zero draw.
    small = alpha < 1.0
    g = rng.standard_gamma(np.where(small, alpha + 1.0, alpha))
    out = np.log(g)
    if np.any(small):
        u = rng.random(alpha.shape)
        out = np.where(small, out + np.log(u) / alpha, out)
    return out


def sample_dirichlet(alpha, rng: RngState) -> np.ndarray:
    """Draw p ~ Dir(alpha) as normalized independent Gamma(alpha_i, 1) variates."""
    a = as_alpha(alpha)
    logs = _log_gamma_variates(a, rng)
    logs -= logs.max()
    w = np.exp(logs)
    return w / w.sum()


def sample_categorical(probs, rng: RngState) -> int:
    """Draw an index i with probability ``probs[i]`` by inverting the CDF."""
    p = as_probs(probs)
    cdf = np.cumsum(p)
    u = rng.random() * cdf[-1]
    i = int(np.searchsorted(cdf, u, side="right"))
    # guard against u landing on the final edge through rounding
    i = min(i, p.size - 1)
    while p[i] == 0.0:
        i -= 1
    return i
