"""Pfaffians, gap-labelling value lattices, and flux-derivative checks.

Differentiating a trace pairing with respect to a flux component B_ij
returns 1/(2 pi) times the next-higher pairing, with {i, j} prepended to
the index set.  Iterating produces the value lattice of a pairing: integer
combinations of (2 pi)^(-|J \\ I|/2) Pf(B_{J \\ I}) over even supersets J
of I.  The Ito derivative has no numerical counterpart, so the checks here
use symmetric differences at flux-commensurate steps, keeping the torus
assembly exact on both sides of the stencil.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations

import numpy as np

from .errors import (
    FluxMismatchError,
    GapClosedError,
    NoGapError,
    NotAntisymmetricError,
    OddDimensionError,
)
from .invariants import TraceWindow, chiral_polarization, plaquette_chern, winding_k
from .model import (
    BulkModel,
    FiniteVolume,
    HoppingSpec,
    MagneticField,
    assemble_bulk,
    magnetic_bloch_fiber,
)
from .spectral import chiral_fermi_data

__all__ = [
    "GapLabelLattice",
    "StredaResult",
    "pfaffian",
    "pairing_lattice",
    "gap_label_check",
    "harper_model",
    "torus_ids",
    "magnetic_chern",
    "streda_check",
]

TWO_PI = 2.0 * np.pi


def pfaffian(a) -> float:
    """Pfaffian of a real antisymmetric matrix by first-row expansion.

    The sizes met here never exceed 6x6 (d <= 6 flux components), where the
    15-term recursion is exact and instantaneous.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("pfaffian needs a square matrix")
    if a.shape[0] % 2:
        raise OddDimensionError("odd-dimension: Pfaffian needs even size")
    if np.linalg.norm(a + a.T) > 1e-12 * max(1.0, np.linalg.norm(a)):
        raise NotAntisymmetricError("not-antisymmetric: ||A + A^T|| too large")
    return _pf_expand(a)


def _pf_expand(a: np.ndarray) -> float:
    n = a.shape[0]
    if n == 0:
        return 1.0
    if n == 2:
        return float(a[0, 1])
    total = 0.0
    for j in range(1, n):
        keep = [k for k in range(n) if k not in (0, j)]
        total += (-1.0) ** (j + 1) * a[0, j] * _pf_expand(a[np.ix_(keep, keep)])
    return total


@dataclass(frozen=True)
class GapLabelLattice:
    """Value lattice of the pairing with index set I at uniform field B.

    terms are (J, coefficient) with J running over the supersets of I inside
    range(d) whose complement J \\ I has even size; the J = I term always
    carries coefficient 1.
    """

    index_set: tuple
    terms: tuple

    def point(self, coeffs) -> float:
        if len(coeffs) != len(self.terms):
            raise ValueError("one integer per lattice term")
        return float(sum(n * c for n, (_, c) in zip(coeffs, self.terms)))


def pairing_lattice(index_set, field: MagneticField, d: int = None) -> GapLabelLattice:
    """Lattice of values the I-pairing can take at the given field."""
    d = field.d if d is None else int(d)
    iset = tuple(sorted(index_set))
    if any(a < 0 or a >= d for a in iset) or len(set(iset)) != len(iset):
        raise ValueError("index set must be distinct axes below d")
    # canonical generators: upper-triangle fluxes reduced to [0, 2 pi);
    # any other representative shifts the coefficients but not the lattice
    b = np.triu(np.mod(field.B, TWO_PI), k=1)
    b = b - b.T
    rest = [a for a in range(d) if a not in iset]
    terms = []
    for size in range(0, len(rest) + 1, 2):
        for extra in combinations(rest, size):
            sub = b[np.ix_(extra, extra)]
            coeff = (TWO_PI) ** (-size / 2.0) * pfaffian(sub)
            if size > 0 and abs(coeff) < 1e-15:
                continue
            terms.append((tuple(sorted(iset + extra)), float(coeff)))
    terms.sort(key=lambda t: (len(t[0]), t[0]))
    return GapLabelLattice(index_set=iset, terms=tuple(terms))


def gap_label_check(value: float, lattice: GapLabelLattice, bound: int = 3):
    """Nearest lattice point with integer coefficients |n| <= bound.

    Returns (coefficients, residual); the search is exhaustive, so the
    number of candidate points (2 bound + 1)^terms is capped.
    """
    nterms = len(lattice.terms)
    npts = (2 * bound + 1) ** nterms
    if npts > 4_000_000:
        raise ValueError("coefficient search too large; lower the bound")
    coeffs = [c for _, c in lattice.terms]
    grids = np.meshgrid(*([np.arange(-bound, bound + 1)] * nterms), indexing="ij")
    total = np.zeros(grids[0].shape)
    for g, c in zip(grids, coeffs):
        total = total + g * c
    flat = np.abs(total.ravel() - float(value))
    lo = float(flat.min())
    near = np.flatnonzero(flat <= lo + 1e-12)
    cands = [tuple(int(g.ravel()[i]) for g in grids) for i in near]
    picked = min(cands, key=lambda c: (sum(abs(n) for n in c), c))
    return picked, lo


# ---------------------------------------------------------------------------
# flux-derivative checks


def harper_model(b: float, t: float = 1.0) -> BulkModel:
    """Square-lattice nearest-neighbor hopping with flux entry B_01 = b.

    Storing the flux in the upper entry keeps the full chain coherent:
    d(IDS)/db equals the plaquette Chern of the occupied magnetic bands
    over 2 pi, and the gap-label generator is +b/(2 pi).
    """
    one = np.array([[t]], dtype=complex)
    hops = (HoppingSpec((1, 0), one), HoppingSpec((0, 1), one))
    return BulkModel(d=2, N=1, hoppings=hops,
                     field=MagneticField.from_entries(2, {(0, 1): b}))


def torus_ids(model: BulkModel, volume: FiniteVolume, mu: float,
              disorder=None, gap_min: float = 1e-9) -> float:
    """States per site below mu on a torus; mu must avoid the spectrum."""
    op = assemble_bulk(model, volume, disorder=disorder)
    e = np.linalg.eigvalsh(op.matrix)
    if np.min(np.abs(e - mu)) < gap_min:
        raise GapClosedError("gap-closed-under-dB: mu touches the spectrum")
    return float(np.count_nonzero(e < mu) / volume.nsites)


def magnetic_chern(model: BulkModel, mu: float, grid=(32, 32),
                   max_q: int = 64):
    """Chern number of the occupied magnetic bands of a d=2 rational-flux model.

    The flux denominator q is read off the field; eigenframes of the
    q-supercell fiber on a uniform (k0, k1) grid feed the plaquette method.
    Returns (chern, q, r) with r the occupied band count.
    """
    phi = Fraction(model.field.B_plus[1, 0] / TWO_PI).limit_denominator(max_q)
    q = phi.denominator
    if abs(model.field.B_plus[1, 0] - TWO_PI * phi) > 1e-9:
        raise FluxMismatchError(
            f"flux-mismatch: flux not p/q with q <= {max_q}")
    n0, n1 = grid
    dim = q * model.N
    w = np.empty((n0, n1, dim))
    v = np.empty((n0, n1, dim, dim), dtype=complex)
    for i0 in range(n0):
        for i1 in range(n1):
            k = (TWO_PI * i0 / n0, TWO_PI * i1 / n1)
            hk = magnetic_bloch_fiber(model, q, k)
            w[i0, i1], v[i0, i1] = np.linalg.eigh(hk)
    occ = w < mu
    r = int(occ[0, 0].sum())
    if r == 0 or not np.all(occ.sum(axis=-1) == r):
        raise NoGapError("no-gap: mu is not in a uniform magnetic gap")
    chern = plaquette_chern(v[..., :r])
    return int(round(chern)), q, r


@dataclass(frozen=True)
class StredaResult:
    derivative: float
    target: float
    mismatch: float
    meta: dict


def streda_check(family, b0: float, delta_b: float, volume: FiniteVolume,
                 index_set=(), mu: float = 0.0, grid=(32, 32),
                 winding_grid: int = 24,
                 window: TraceWindow = TraceWindow()) -> StredaResult:
    """Symmetric flux difference of a pairing against its higher pairing.

    family maps a flux value to a BulkModel.  index_set () differentiates
    the density of states on a torus and compares to Ch/(2 pi) of the
    occupied magnetic bands at the central flux.  index_set (k,) in d = 3
    differentiates the chiral polarization P_C,k on an open box and
    compares to -eta Ch_3/(4 pi), eta ordering (i, j, k): the chain
    P_C,k = -Ch_{k}(u_F)/2 and dCh_I/dB_ij = Ch_{ij+I}/(2 pi) keeps the
    leading minus when Ch_3 carries the index-normalized orientation.
    The target uses the zero-field winding, which the gap assumption
    keeps constant in b.
    """
    iset = tuple(index_set)
    meta = {"b0": b0, "delta_b": delta_b, "index_set": iset, "mu": mu}
    if not iset:
        ids = [torus_ids(family(b), volume, mu)
               for b in (b0 - delta_b, b0 + delta_b)]
        deriv = (ids[1] - ids[0]) / (2.0 * delta_b)
        chern, q, r = magnetic_chern(family(b0), mu, grid=grid)
        target = chern / TWO_PI
        meta.update(ids=tuple(ids), chern=chern, q=q, bands=r)
    elif len(iset) == 1:
        k = iset[0]
        d = volume.d
        if d != 3:
            raise ValueError("polarization derivative implemented for d = 3")
        pair = tuple(a for a in range(d) if a != k)
        eta = 1.0 if (pair[0], pair[1], k) == (0, 1, 2) else \
            float(np.sign(_perm_sign(pair + (k,))))
        pc = []
        for b in (b0 - delta_b, b0 + delta_b):
            mod = family(b)
            # grading as a diagonal vector and blocks-only Fermi data keep
            # the dominant allocation at one full H plus two half blocks
            jvec = np.tile(np.diag(mod.J).real, volume.nsites)
            op = assemble_bulk(mod, volume)
            fd = chiral_fermi_data(op, J=jvec, blocks_only=True)
            del op
            pc.append(chiral_polarization(fd, k, volume, jvec, window=window))
        deriv = (pc[1] - pc[0]) / (2.0 * delta_b)
        ch3 = winding_k(family(0.0), winding_grid)
        target = -eta * ch3.value / (2.0 * TWO_PI)
        meta.update(pc=tuple(pc), chern=ch3.rounded, eta=eta)
    else:
        raise ValueError("index_set must be () or a single axis")
    return StredaResult(derivative=float(deriv), target=float(target),
                        mismatch=float(abs(deriv - target)), meta=meta)


def _perm_sign(p) -> int:
    sign = 1
    p = list(p)
    for i in range(len(p)):
        for j in range(i + 1, len(p)):
            if p[i] > p[j]:
                sign = -sign
    return sign
