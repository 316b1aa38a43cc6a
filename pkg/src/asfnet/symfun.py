"""Power sums, Newton's identities, and multiset recovery.

Numerical witness for the symmetric-function facts behind permutation
invariance: the sum-of-power map on a multiset is injective and has a
continuous inverse, demonstrated here by actually inverting it (power
sums -> elementary symmetric polynomials -> polynomial roots).

Degrees are kept small (M <= 8 in the tests): the Newton recurrence and
root finding are exact-arithmetic statements that grow ill-conditioned
with degree, so the demonstration lives at well-conditioned scale.
"""

from __future__ import annotations

import numpy as np


class InconsistentPowerSumsError(ValueError):
    """The given power sums do not come from a real multiset in [0, 1]."""


def power_sums(values) -> np.ndarray:
    """Coordinate functions p_q = sum_m x_m^q for q = 0..M.

    Permutation invariant by construction; p_0 = M exactly.
    """
    x = np.asarray(values, dtype=np.float64)
    if x.ndim != 1 or x.size < 1:
        raise ValueError("expected a non-empty 1-D multiset")
    m = x.size
    return np.array([float(m)] + [float(np.sum(x**q)) for q in range(1, m + 1)])


def newton_elementary(ps: np.ndarray) -> np.ndarray:
    """Elementary symmetric polynomials e_1..e_M from power sums.

    Newton recurrence: r * e_r = sum_{i=1..r} (-1)^(i-1) e_{r-i} p_i.
    """
    ps = np.asarray(ps, dtype=np.float64)
    m = ps.size - 1
    e = np.zeros(m + 1)
    e[0] = 1.0
    for r in range(1, m + 1):
        acc = 0.0
        for i in range(1, r + 1):
            acc += (-1.0) ** (i - 1) * e[r - i] * ps[i]
        e[r] = acc / r
    return e[1:]


def _merge_root_clusters(roots: np.ndarray) -> np.ndarray:
    """Collapse the split clusters that multiple roots produce.

    A root of multiplicity m comes out of the companion-matrix solve as
    m points scattered on a circle whose radius grows like eps^(1/m),
    flagged by their imaginary parts.  Cluster members are linked when
    their distance is within a few times those imaginary parts, and
    each cluster is replaced by copies of its mean; the mean of a
    cluster is accurate to machine precision because the root sum is an
    exact polynomial coefficient.  Genuinely distinct real roots have
    negligible imaginary parts and are never linked.
    """
    m = roots.size
    parent = list(range(m))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(m):
        for j in range(i + 1, m):
            # double roots may split into two nearby *real* roots with no
            # imaginary signature, hence the small absolute floor
            link = 4.0 * max(abs(roots[i].imag), abs(roots[j].imag)) + 4e-6
            if abs(roots[i] - roots[j]) <= link:
                parent[find(i)] = find(j)
    merged = roots.copy()
    for rep in set(find(i) for i in range(m)):
        members = [i for i in range(m) if find(i) == rep]
        merged[members] = np.mean(roots[members])
    return merged


def recover_multiset(ps: np.ndarray, domain_tol: float = 1e-3) -> np.ndarray:
    """Invert the power-sum map: returns the sorted multiset.

    Builds the monic polynomial prod(x - x_m) from the elementary
    symmetric polynomials and takes its roots (companion-matrix
    eigenvalues via numpy), merging multiple-root clusters.  Raises
    InconsistentPowerSumsError if the result is not a real multiset in
    [-tol, 1 + tol] reproducing the input power sums.
    """
    ps = np.asarray(ps, dtype=np.float64)
    m = ps.size - 1
    e = newton_elementary(ps)
    # prod(x - x_m) = x^M - e1 x^(M-1) + e2 x^(M-2) - ...
    poly = np.concatenate(([1.0], (-1.0) ** np.arange(1, m + 1) * e))
    roots = _merge_root_clusters(np.roots(poly))
    if np.any(np.abs(roots.imag) > domain_tol):
        raise InconsistentPowerSumsError(
            f"complex roots found (max |imag| = {np.abs(roots.imag).max():.3g})"
        )
    real = np.sort(roots.real)
    if real.min() < -domain_tol or real.max() > 1.0 + domain_tol:
        raise InconsistentPowerSumsError(
            f"roots outside [0, 1]: range [{real.min():.3g}, {real.max():.3g}]"
        )
    back = power_sums(np.clip(real, 0.0, 1.0))
    if not np.allclose(back, ps, rtol=1e-3, atol=1e-3):
        raise InconsistentPowerSumsError(
            "recovered multiset does not reproduce the input power sums"
        )
    return real
