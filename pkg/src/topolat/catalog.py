"""Exactly solvable model families and their closed-form oracles.

Builders return BulkModel instances for the standard chiral chain (ssh),
the even-dimensional Dirac family (dirac_even) and the odd-dimensional
chiral family (chiral_odd).  The analytic side provides the integer phase
diagram of these families, boundary Weyl point enumeration with
chiralities, the d=2 edge band, and the Anderson localization length of
the disordered chain at E=0, both in closed form and as a transfer-matrix
Monte Carlo estimate.

Sign conventions.  Positions enter invariants through i[.,X], and the
orientation is fixed so that the plain shift S (hopping to the right) has
winding +1.  The chain with hopping sigma_+ then has Fermi unitary S* and
winding -1 for |m| < 1.  This pins the odd-d orientation factor to
chi = (-1)^((d+1)/2); the even-d factor is chi = (-1)^(d/2+1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .clifford import build_rep
from .errors import NoGapError
from .model import BulkModel, HoppingSpec

__all__ = [
    "WeylPoint",
    "PhasePoint",
    "ssh",
    "dirac_even",
    "chiral_odd",
    "analytic_chern",
    "weyl_points",
    "edge_band",
    "localization_length_analytic",
    "lyapunov_transfer",
]

_SIGMA_PLUS = np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex)
_SIGMA_2 = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)


@dataclass(frozen=True)
class WeylPoint:
    """Boundary band crossing at momentum k with slope-product chirality."""

    k: tuple
    chirality: int
    energy: float = 0.0


@dataclass(frozen=True)
class PhasePoint:
    """Phase-diagram sample: mass m sits in window n with the given Chern number."""

    m: float
    n: Optional[int]
    chern: int
    chi: int


def ssh(m: float, lambda1: float = 0.0, lambda2: float = 0.0, nprime: int = 1) -> BulkModel:
    """Chiral chain on a 2N' fiber: hopping sigma_+ (x) 1, on-site mass m sigma_2 (x) 1.

    lambda1 multiplies the hopping disorder, lambda2 the mass disorder;
    both enter multiplicatively as W (1 + lambda w) with w uniform on
    [-1/2, 1/2].  Bands are +-sqrt(m^2 + 1 - 2 m sin k), flat at m=0, and
    the central gap ||m| - 1| closes only at m = +-1.
    """
    if nprime < 1:
        raise ValueError("nprime must be positive")
    eye = np.eye(nprime)
    hops = (
        HoppingSpec((1,), np.kron(_SIGMA_PLUS, eye), lambda1),
        HoppingSpec((0,), m * np.kron(_SIGMA_2, eye), lambda2),
    )
    return BulkModel(d=1, N=2 * nprime, hoppings=hops, mu=0.0, chiral=True)


def dirac_even(d: int, m: float, lambda_hop: float = 0.0, lambda_mass: float = 0.0) -> BulkModel:
    """Dirac model on the 2^(d/2) fiber: hops gamma_j/(2i) + gamma_0/2, mass m gamma_0.

    gamma_0 is the grading of the irreducible Cl_d representation.  The
    Bloch bands are +-sqrt(sum_j sin^2 k_j + (m + sum_j cos k_j)^2), each
    (d/2)-fold degenerate, with gap closings at m in {-d, -d+2, ..., d}.
    """
    if d < 2 or d % 2:
        raise ValueError("dirac_even needs even d >= 2")
    rep = build_rep(d)
    gamma0 = rep.chirality.astype(complex)
    hops = []
    for j in range(d):
        y = tuple(1 if i == j else 0 for i in range(d))
        w = rep.generators[j] / 2.0j + gamma0 / 2.0
        hops.append(HoppingSpec(y, w, lambda_hop))
    hops.append(HoppingSpec((0,) * d, m * gamma0, lambda_mass))
    return BulkModel(d=d, N=rep.dim, hoppings=tuple(hops), mu=0.0, chiral=False)


def chiral_odd(d: int, m: float, lambda_hop: float = 0.0, lambda_mass: float = 0.0) -> BulkModel:
    """Chiral model on the 2^((d+1)/2) fiber: hops gamma_j/(2i) + gamma_{d+1}/2, mass m gamma_{d+1}.

    Built on the Cl_{d+1} representation; all d+1 generators are block
    off-diagonal with respect to the grading, so the model is chiral and
    its central gap closes at m in {-d, -d+2, ..., d}.  At d=1 this is
    the sigma_+ chain up to the gauge x -> i^x.
    """
    if d < 1 or d % 2 == 0:
        raise ValueError("chiral_odd needs odd d >= 1")
    rep = build_rep(d + 1)
    mass = rep.generators[d].astype(complex)
    hops = []
    for j in range(d):
        y = tuple(1 if i == j else 0 for i in range(d))
        w = rep.generators[j] / 2.0j + mass / 2.0
        hops.append(HoppingSpec(y, w, lambda_hop))
    hops.append(HoppingSpec((0,) * d, m * mass, lambda_mass))
    return BulkModel(d=d, N=rep.dim, hoppings=tuple(hops), mu=0.0, chiral=True)


def critical_masses(d: int) -> tuple:
    """Gap-closing masses of the Dirac/chiral families: -d, -d+2, ..., d."""
    return tuple(float(-d + 2 * j) for j in range(d + 1))


def analytic_chern(d: int, m: float, tol: float = 1e-12) -> PhasePoint:
    """Closed-form top invariant of dirac_even / chiral_odd at mass m.

    In the window (-d+2n, -d+2n+2) the value is chi (-1)^n C(d-1, n) and
    zero outside [-d, d], with chi = (-1)^(d/2+1) for even d and
    chi = (-1)^((d+1)/2) for odd d (orientation such that the d=1 chain
    has winding -1 on |m| < 1).  Raises NoGapError at a critical mass.
    """
    if d < 1:
        raise ValueError("d must be positive")
    if d % 2 == 0:
        chi = (-1) ** (d // 2 + 1)
    else:
        chi = (-1) ** ((d + 1) // 2)
    for mc in critical_masses(d):
        if abs(m - mc) <= tol:
            raise NoGapError(f"gap closes at m={mc:g}")
    if abs(m) > d:
        return PhasePoint(m=float(m), n=None, chern=0, chi=chi)
    n = int(math.floor((m + d) / 2.0))
    chern = chi * (-1) ** n * math.comb(d - 1, n)
    return PhasePoint(m=float(m), n=n, chern=chern, chi=chi)


def weyl_points(d: int, m: float):
    """Enumerate boundary Weyl points of dirac_even(d, m) on the last-axis face.

    Candidates sit at k in {0, pi}^(d-1); one exists iff |m + sum_j cos k_j| < 1
    and carries chirality (-1)^(number of pi components).  Returns the point
    list and the total chirality.
    """
    if d < 2 or d % 2:
        raise ValueError("weyl_points needs even d >= 2")
    points = []
    total = 0
    for bits in range(2 ** (d - 1)):
        npi = bin(bits).count("1")
        lam = m + (d - 1 - npi) - npi
        if abs(lam) < 1.0:
            k = tuple(math.pi if (bits >> j) & 1 else 0.0 for j in range(d - 1))
            nu = (-1) ** npi
            points.append(WeylPoint(k=k, chirality=nu))
            total += nu
    points.sort(key=lambda p: p.k)
    return points, total


def edge_band(m: float, k: float):
    """In-gap boundary band of dirac_even(2, m) at parallel momentum k.

    Returns (sin k, lambda_k) with lambda_k = -(m + cos k) when the
    localization factor satisfies |lambda_k| < 1, else None.
    """
    lam = -(m + math.cos(k))
    # tolerance so momenta that sit exactly on the window edge (up to
    # rounding in cos) are classified as outside
    if abs(lam) >= 1.0 - 1e-12:
        return None
    return math.sin(k), lam


def _xlogabs(x: float) -> float:
    # antiderivative ingredient of log|u|; continuous through 0
    if x == 0.0:
        return 0.0
    return x * math.log(abs(x))


def _mean_log_uniform(center: float, width: float) -> float:
    """E[log|center + width w|] for w uniform on [-1/2, 1/2]."""
    if width == 0.0:
        if center == 0.0:
            return -math.inf
        return math.log(abs(center))
    a = center - width / 2.0
    b = center + width / 2.0
    return (_xlogabs(b) - _xlogabs(a)) / width - 1.0


def localization_length_analytic(m: float, lambda1: float, lambda2: float) -> float:
    """Inverse localization length of the disordered chain at E=0, closed form.

    Evaluates |E[log|t|] - E[log|m_x|]| for t uniform on 1 + lambda1 [-1/2,1/2]
    and m_x uniform on m + lambda2 [-1/2,1/2].  The expectations integrate
    through sign changes of the arguments, so the formula holds for all
    coupling strengths; it reduces to |log|m|| in the clean limit and
    vanishes on the divergence manifold E[log|t|] = E[log|m_x|].
    """
    if lambda1 < 0 or lambda2 < 0:
        raise ValueError("disorder couplings must be nonnegative")
    et = _mean_log_uniform(1.0, lambda1)
    em = _mean_log_uniform(m, lambda2)
    if em == -math.inf:
        return math.inf
    return abs(et - em)


def lyapunov_transfer(m: float, lambda1: float, lambda2: float, sites: int, seed: int):
    """Transfer-matrix estimate of the inverse localization length at E=0.

    The zero-energy Schroedinger equation decouples into scalar recursions
    with ratio t_x / m_x per site, so the Lyapunov exponent is the Birkhoff
    mean of log|t_x| - log|m_x| over independent draws t_x = 1 + lambda1 w',
    m_x = m + lambda2 w''.  Returns (estimate, standard error of the mean).
    """
    if sites < 2:
        raise ValueError("need at least 2 sites")
    rng = np.random.default_rng(seed)
    vals = np.empty(sites, dtype=float)
    done = 0
    chunk = 1 << 18
    while done < sites:
        n = min(chunk, sites - done)
        t = 1.0 + lambda1 * (rng.random(n) - 0.5)
        mm = m + lambda2 * (rng.random(n) - 0.5)
        vals[done : done + n] = np.log(np.abs(t)) - np.log(np.abs(mm))
        done += n
    mean = float(vals.mean())
    stderr = float(vals.std(ddof=1) / math.sqrt(sites))
    return abs(mean), stderr
