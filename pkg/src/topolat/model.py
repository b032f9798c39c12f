"""Tight-binding models on Z^d: bulk, half-space, disorder, magnetic field.

Models are declarative (hopping matrices, disorder couplings, field) and are
materialized on finite volumes in the Landau gauge. The matrix element
convention is

    <x| H |x-y> = e^{i<y|B_+|x> - (i/2)<y|B_+|y>} W_y (1 + lambda_y w_x^y)

with B_+ the strictly lower triangular part of the antisymmetric field matrix
B. Hops along the last axis then carry no phase, which is what makes the
half-space restriction gauge-compatible.

Hermiticity scheme: listed hops must have zero or positive-lexicographic
displacement; the conjugate hop is implied and reuses the same disorder draw,
keyed by the target site of the listed orientation. Assembly accumulates
D (on-site) + T (listed hops) and returns D + T + T^dagger.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import (
    BlochDisorderError,
    BlochFieldError,
    BoundaryDepthError,
    FluxMismatchError,
    RangeTooLargeError,
)

__all__ = [
    "MagneticField",
    "HoppingSpec",
    "BulkModel",
    "BoundaryTerm",
    "HalfSpaceModel",
    "DisorderConfig",
    "FiniteVolume",
    "LatticeOperator",
    "assemble_bulk",
    "assemble_halfspace",
    "bloch_fiber",
    "magnetic_bloch_fiber",
    "halfspace_fiber",
    "magnetic_translation",
    "symmetric_gauge_transform",
    "sample_disorder",
    "clean_disorder",
]

TWO_PI = 2.0 * math.pi


# ---------------------------------------------------------------------------
# magnetic field


@dataclass(frozen=True, eq=False)
class MagneticField:
    """Uniform field given by its strictly lower triangular part B_+.

    Entries are stored modulo 2 pi (only e^{i n B_ij} with integer n ever
    enters); the full antisymmetric matrix is B = B_+ - B_+^T.
    """

    B_plus: np.ndarray

    def __post_init__(self):
        bp = np.asarray(self.B_plus, dtype=float)
        if bp.ndim != 2 or bp.shape[0] != bp.shape[1]:
            raise ValueError("B_plus must be a square matrix")
        if np.any(np.abs(np.triu(bp)) > 0):
            raise ValueError("B_plus must be strictly lower triangular")
        object.__setattr__(self, "B_plus", np.mod(bp, TWO_PI))

    @property
    def d(self) -> int:
        return self.B_plus.shape[0]

    @property
    def B(self) -> np.ndarray:
        return self.B_plus - self.B_plus.T

    @classmethod
    def zero(cls, d: int) -> "MagneticField":
        return cls(np.zeros((d, d)))

    @classmethod
    def from_entries(cls, d: int, entries: dict) -> "MagneticField":
        """Field from {(i, j): B_ij} with 0-indexed axes i != j (radians)."""
        b = np.zeros((d, d))
        for (i, j), v in entries.items():
            if i == j or not (0 <= i < d and 0 <= j < d):
                raise ValueError(f"bad field entry axes ({i},{j})")
            b[i, j] += float(v)
            b[j, i] -= float(v)
        return cls(np.tril(b, k=-1))

    def is_zero(self, tol: float = 1e-12) -> bool:
        bp = self.B_plus
        return bool(np.all((bp < tol) | (TWO_PI - bp < tol)))

    def flux(self, i: int, j: int) -> float:
        """B_ij reduced to (-2pi, 2pi)."""
        return float(self.B[i, j])


# ---------------------------------------------------------------------------
# volumes


_BCS = ("periodic", "open", "halfspace")


@dataclass(frozen=True, eq=False)
class FiniteVolume:
    """Axis-aligned box with per-axis boundary conditions, row-major sites."""

    sizes: tuple
    bc: tuple

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        bc = tuple(self.bc)
        if len(sizes) != len(bc) or len(sizes) == 0:
            raise ValueError("sizes and bc must have equal positive length")
        if any(s < 1 for s in sizes):
            raise ValueError("sizes must be positive")
        for a, b in enumerate(bc):
            if b not in _BCS:
                raise ValueError(f"unknown boundary condition {b!r}")
            if b == "halfspace" and a != len(bc) - 1:
                raise ValueError("halfspace allowed only on the last axis")
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "bc", bc)

    @classmethod
    def torus(cls, sizes) -> "FiniteVolume":
        sizes = tuple(sizes)
        return cls(sizes, ("periodic",) * len(sizes))

    @classmethod
    def box(cls, sizes) -> "FiniteVolume":
        sizes = tuple(sizes)
        return cls(sizes, ("open",) * len(sizes))

    @classmethod
    def slab(cls, sizes, parallel: str = "periodic") -> "FiniteVolume":
        sizes = tuple(sizes)
        return cls(sizes, (parallel,) * (len(sizes) - 1) + ("halfspace",))

    @property
    def d(self) -> int:
        return len(self.sizes)

    @property
    def nsites(self) -> int:
        return int(np.prod(self.sizes))

    def dim(self, fiber: int) -> int:
        return self.nsites * fiber

    def coords(self) -> np.ndarray:
        """(nsites, d) integer coordinates in row-major (C) order."""
        grids = np.indices(self.sizes).reshape(self.d, -1)
        return grids.T.astype(np.int64)

    def centered_positions(self) -> np.ndarray:
        """Coordinates shifted by floor(L/2) per axis (center near origin)."""
        off = np.array([s // 2 for s in self.sizes], dtype=np.int64)
        return self.coords() - off[None, :]

    def ravel(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts)
        return np.ravel_multi_index(tuple(pts.T), self.sizes)


# ---------------------------------------------------------------------------
# models


def _poslex(y) -> bool:
    for c in y:
        if c != 0:
            return c > 0
    return False


def _check_chiral_block(w: np.ndarray, nprime: int, what: str) -> None:
    if max(np.max(np.abs(w[:nprime, :nprime])), np.max(np.abs(w[nprime:, nprime:]))) > 1e-12:
        raise ValueError(f"{what} must be block-off-diagonal for a chiral model")


@dataclass(frozen=True, eq=False)
class HoppingSpec:
    """One hop: displacement y, N x N matrix W, disorder coupling lambda."""

    y: tuple
    W: np.ndarray
    lam: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "y", tuple(int(c) for c in self.y))
        object.__setattr__(self, "W", np.asarray(self.W, dtype=complex))
        if self.lam < 0:
            raise ValueError("disorder coupling must be nonnegative")


@dataclass(frozen=True, eq=False)
class BulkModel:
    """Translation-covariant model: hops, field, Fermi level, chiral flag.

    Listed displacements must be zero or positive-lexicographic; the conjugate
    hops W_{-y} = W_y^dagger are implied. A zero displacement requires a
    Hermitian matrix. chiral=True asserts the J = diag(1, -1) block structure
    (all hop matrices block-off-diagonal, mu = 0).
    """

    d: int
    N: int
    hoppings: tuple
    field: MagneticField = None
    mu: float = 0.0
    chiral: bool = False

    def __post_init__(self):
        object.__setattr__(self, "hoppings", tuple(self.hoppings))
        if self.field is None:
            object.__setattr__(self, "field", MagneticField.zero(self.d))
        if self.field.d != self.d:
            raise ValueError("field dimension mismatch")
        if self.chiral and (self.N % 2 != 0 or self.mu != 0.0):
            raise ValueError("chiral models need even fiber dimension and mu = 0")
        for hop in self.hoppings:
            if len(hop.y) != self.d:
                raise ValueError("hop displacement dimension mismatch")
            if hop.W.shape != (self.N, self.N):
                raise ValueError("hop matrix must be N x N")
            if all(c == 0 for c in hop.y):
                if np.max(np.abs(hop.W - hop.W.conj().T)) > 1e-12:
                    raise ValueError("zero-displacement hop matrix must be Hermitian")
            elif not _poslex(hop.y):
                raise ValueError(
                    "hop displacements must be zero or positive-lexicographic; "
                    "conjugate hops are implied")
            if self.chiral:
                _check_chiral_block(hop.W, self.N // 2, "hop matrix")

    @property
    def J(self) -> np.ndarray:
        if not self.chiral:
            raise ValueError("J defined only for chiral models")
        np_ = self.N // 2
        return np.diag(np.concatenate([np.ones(np_), -np.ones(np_)]))

    def hop_range(self) -> np.ndarray:
        """Per-axis maximum |y_i| over listed hops."""
        r = np.zeros(self.d, dtype=np.int64)
        for hop in self.hoppings:
            r = np.maximum(r, np.abs(np.asarray(hop.y)))
        return r


@dataclass(frozen=True, eq=False)
class BoundaryTerm:
    """Boundary hop at depth: parallel displacement y, rows n <- m, matrix W.

    Canonical listing: y positive-lexicographic, or y = 0 with n > m, or
    y = 0 and n = m with Hermitian W; the conjugate term is implied.
    """

    y: tuple
    n: int
    m: int
    W: np.ndarray
    lam: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "y", tuple(int(c) for c in self.y))
        object.__setattr__(self, "W", np.asarray(self.W, dtype=complex))
        if self.n < 0 or self.m < 0:
            raise ValueError("boundary depths must be nonnegative")
        if self.lam < 0:
            raise ValueError("disorder coupling must be nonnegative")
        yzero = all(c == 0 for c in self.y)
        if yzero and self.n == self.m:
            if np.max(np.abs(self.W - self.W.conj().T)) > 1e-12:
                raise ValueError("diagonal boundary term must be Hermitian")
        elif not (_poslex(self.y) or (yzero and self.n > self.m)):
            raise ValueError(
                "boundary terms must be listed in canonical orientation; "
                "conjugates are implied")

    @property
    def is_diagonal(self) -> bool:
        return all(c == 0 for c in self.y) and self.n == self.m


@dataclass(frozen=True, eq=False)
class HalfSpaceModel:
    """Dirichlet restriction of a bulk model plus boundary terms of depth R."""

    bulk: BulkModel
    boundary_terms: tuple = ()
    R: int = 0

    def __post_init__(self):
        object.__setattr__(self, "boundary_terms", tuple(self.boundary_terms))
        r = self.R
        for t in self.boundary_terms:
            if len(t.y) != self.bulk.d - 1:
                raise ValueError("boundary displacement must have d-1 components")
            if t.W.shape != (self.bulk.N, self.bulk.N):
                raise ValueError("boundary matrix must be N x N")
            if self.bulk.chiral:
                _check_chiral_block(t.W, self.bulk.N // 2, "boundary matrix")
            r = max(r, t.n, t.m)
        object.__setattr__(self, "R", int(r))

    @property
    def d(self) -> int:
        return self.bulk.d

    @property
    def N(self) -> int:
        return self.bulk.N


# ---------------------------------------------------------------------------
# disorder


@dataclass(frozen=True, eq=False)
class DisorderConfig:
    """Per-(hop, target site) uniform draws on [-1/2, 1/2].

    draws has shape (n_hops, nsites); boundary_draws, for half-space models,
    has shape (n_boundary_terms, n_parallel_sites). seed None marks the clean
    (all-zero) configuration.
    """

    seed: object
    draws: np.ndarray
    boundary_draws: np.ndarray = None

    def shifted(self, z, volume: FiniteVolume) -> "DisorderConfig":
        """Draws of the translated configuration: w'_x = w_{x - z}."""
        z = np.asarray(z, dtype=np.int64)
        src = np.mod(volume.coords() - z[None, :], np.asarray(volume.sizes))
        draws = self.draws[:, volume.ravel(src)]
        bdraws = self.boundary_draws
        if bdraws is not None and volume.d > 1:
            par = FiniteVolume(volume.sizes[:-1], volume.bc[:-1])
            psrc = np.mod(par.coords() - z[None, :-1], np.asarray(par.sizes))
            bdraws = bdraws[:, par.ravel(psrc)]
        return DisorderConfig(seed=self.seed, draws=draws, boundary_draws=bdraws)


def sample_disorder(model, volume: FiniteVolume, seed: int,
                    boundary_seed: int = None) -> DisorderConfig:
    """Deterministic draws for every (hop, site) channel of the model.

    For half-space models the boundary channels are drawn from their own seed
    when given, else from the continuation of the bulk stream.
    """
    bulk = model.bulk if isinstance(model, HalfSpaceModel) else model
    rng = np.random.default_rng(seed)
    draws = rng.uniform(-0.5, 0.5, size=(len(bulk.hoppings), volume.nsites))
    bdraws = None
    if isinstance(model, HalfSpaceModel):
        npar = int(np.prod(volume.sizes[:-1]))
        brng = np.random.default_rng(boundary_seed) if boundary_seed is not None else rng
        bdraws = brng.uniform(-0.5, 0.5, size=(len(model.boundary_terms), npar))
    return DisorderConfig(seed=seed, draws=draws, boundary_draws=bdraws)


def clean_disorder(model, volume: FiniteVolume) -> DisorderConfig:
    bulk = model.bulk if isinstance(model, HalfSpaceModel) else model
    draws = np.zeros((len(bulk.hoppings), volume.nsites))
    bdraws = None
    if isinstance(model, HalfSpaceModel):
        npar = int(np.prod(volume.sizes[:-1]))
        bdraws = np.zeros((len(model.boundary_terms), npar))
    return DisorderConfig(seed=None, draws=draws, boundary_draws=bdraws)


# ---------------------------------------------------------------------------
# assembly


@dataclass(frozen=True, eq=False)
class LatticeOperator:
    """Dense Hermitian operator on C^N tensor l^2(volume), site-major."""

    matrix: np.ndarray
    volume: FiniteVolume
    fiber: int
    model: object = None

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


def _wrap_sources(S: np.ndarray, chi: np.ndarray, keep: np.ndarray,
                  volume: FiniteVolume, bp: np.ndarray) -> None:
    """Fold source coordinates into the volume, accumulating wrap phases.

    Periodic axes are unwrapped in descending axis order; the phase picked up
    per L_j step along axis j is e^{i L_j <s|B_+|e_j>}, which only involves
    higher-axis coordinates (already folded), so all steps commute. Non
    periodic axes mark out-of-range sources as dropped.
    """
    for j in reversed(range(volume.d)):
        lj = volume.sizes[j]
        if volume.bc[j] == "periodic":
            kj = np.floor_divide(S[:, j], lj)
            nz = np.nonzero(kj)[0]
            if nz.size:
                S[nz, j] -= kj[nz] * lj
                col = bp[:, j]
                if np.any(col):
                    chi[nz] = chi[nz] * np.exp(1j * lj * (S[nz] @ col) * kj[nz])
        else:
            keep &= (S[:, j] >= 0) & (S[:, j] < lj)


def _accumulate_hop(diag: np.ndarray, tri: np.ndarray, targets: np.ndarray,
                    y: np.ndarray, w: np.ndarray, scale: np.ndarray,
                    volume: FiniteVolume, bp: np.ndarray, fiber: int) -> None:
    """Add one listed hop (targets -> targets - y) with Peierls phases.

    y = 0 contributions go into diag; others into tri (conjugates are added
    once at the end as tri^dagger).
    """
    nsites = volume.nsites
    tflat = volume.ravel(targets)
    if not np.any(y):
        view = diag.reshape(nsites, fiber, nsites, fiber)
        view[tflat, :, tflat, :] += scale[:, None, None] * w[None, :, :]
        return
    S = targets - y[None, :]
    chi = np.ones(targets.shape[0], dtype=complex)
    keep = np.ones(targets.shape[0], dtype=bool)
    _wrap_sources(S, chi, keep, volume, bp)
    idx = np.nonzero(keep)[0]
    if idx.size == 0:
        return
    sflat = volume.ravel(S[idx])
    phase = np.exp(1j * (targets[idx] @ (bp.T @ y)) - 0.5j * (y @ bp @ y)) * chi[idx]
    amps = phase * scale[idx]
    view = tri.reshape(nsites, fiber, nsites, fiber)
    view[tflat[idx], :, sflat, :] += amps[:, None, None] * w[None, :, :]


def _check_flux(field: MagneticField, volume: FiniteVolume) -> None:
    b = field.B
    for i in range(volume.d):
        for j in range(i + 1, volume.d):
            if volume.bc[i] == "periodic" and volume.bc[j] == "periodic":
                phi = volume.sizes[i] * volume.sizes[j] * b[i, j] / TWO_PI
                if abs(phi - round(phi)) > 1e-9:
                    raise FluxMismatchError(
                        f"flux-mismatch: axes ({i},{j}) enclose flux {phi} x 2pi")


def _check_range(ranges: np.ndarray, volume: FiniteVolume) -> None:
    for j in range(volume.d):
        if volume.bc[j] == "periodic" and volume.sizes[j] <= 2 * int(ranges[j]):
            raise RangeTooLargeError(
                f"range-too-large: axis {j} needs L > {2 * int(ranges[j])}")


def assemble_bulk(model: BulkModel, volume: FiniteVolume,
                  disorder: DisorderConfig = None) -> LatticeOperator:
    """Materialize a bulk model on a torus or open box (Landau gauge)."""
    if volume.d != model.d:
        raise ValueError("volume dimension mismatch")
    if "halfspace" in volume.bc:
        raise ValueError("use assemble_halfspace for half-space volumes")
    _check_flux(model.field, volume)
    _check_range(model.hop_range(), volume)
    if disorder is None:
        disorder = clean_disorder(model, volume)
    if disorder.draws.shape != (len(model.hoppings), volume.nsites):
        raise ValueError("disorder draws do not match model and volume")
    n = model.N
    dim = volume.dim(n)
    diag = np.zeros((dim, dim), dtype=complex)
    tri = np.zeros((dim, dim), dtype=complex)
    targets = volume.coords()
    bp = model.field.B_plus
    for t, hop in enumerate(model.hoppings):
        scale = 1.0 + hop.lam * disorder.draws[t]
        _accumulate_hop(diag, tri, targets, np.asarray(hop.y, dtype=np.int64),
                        hop.W, scale, volume, bp, n)
    h = diag + tri + tri.conj().T
    assert np.max(np.abs(h - h.conj().T)) < 1e-12
    return LatticeOperator(matrix=h, volume=volume, fiber=n, model=model)


def assemble_halfspace(model: HalfSpaceModel, volume: FiniteVolume,
                       disorder: DisorderConfig = None) -> LatticeOperator:
    """Dirichlet-restricted bulk plus boundary terms on a half-space volume.

    The boundary term at (y, n, m) acts from layer m into layer n with the
    same Landau phase as a bulk hop of displacement (y, n - m) would carry.
    """
    bulk = model.bulk
    if volume.d != bulk.d:
        raise ValueError("volume dimension mismatch")
    if volume.bc[-1] != "halfspace":
        raise ValueError("last axis must have halfspace boundary conditions")
    ld = volume.sizes[-1]
    if model.R >= ld:
        raise BoundaryDepthError(
            f"boundary-depth: depth {model.R} does not fit in {ld} layers")
    _check_flux(bulk.field, volume)
    ranges = bulk.hop_range()
    for t in model.boundary_terms:
        ranges[:-1] = np.maximum(ranges[:-1], np.abs(np.asarray(t.y)))
    _check_range(ranges, volume)
    if disorder is None:
        disorder = clean_disorder(model, volume)
    npar = int(np.prod(volume.sizes[:-1]))
    if disorder.draws.shape != (len(bulk.hoppings), volume.nsites):
        raise ValueError("disorder draws do not match model and volume")
    bdraws = disorder.boundary_draws
    if bdraws is None:
        bdraws = np.zeros((len(model.boundary_terms), npar))
    if bdraws.shape != (len(model.boundary_terms), npar):
        raise ValueError("boundary draws do not match model and volume")

    n = bulk.N
    dim = volume.dim(n)
    diag = np.zeros((dim, dim), dtype=complex)
    tri = np.zeros((dim, dim), dtype=complex)
    coords = volume.coords()
    bp = bulk.field.B_plus
    for t, hop in enumerate(bulk.hoppings):
        scale = 1.0 + hop.lam * disorder.draws[t]
        _accumulate_hop(diag, tri, coords, np.asarray(hop.y, dtype=np.int64),
                        hop.W, scale, volume, bp, n)
    # boundary terms live on the layer x_d = n of each term
    par = FiniteVolume(volume.sizes[:-1], volume.bc[:-1]) if volume.d > 1 else None
    pcoords = par.coords() if par is not None else np.zeros((1, 0), dtype=np.int64)
    for t, term in enumerate(model.boundary_terms):
        layer = np.concatenate(
            [pcoords, np.full((pcoords.shape[0], 1), term.n, dtype=np.int64)], axis=1)
        y = np.asarray(tuple(term.y) + (term.n - term.m,), dtype=np.int64)
        scale = 1.0 + term.lam * bdraws[t]
        _accumulate_hop(diag, tri, layer, y, term.W, scale, volume, bp, n)
    h = diag + tri + tri.conj().T
    assert np.max(np.abs(h - h.conj().T)) < 1e-12
    return LatticeOperator(matrix=h, volume=volume, fiber=n, model=model)


def assemble_current(model, volume: FiniteVolume, direction: int,
                     disorder: DisorderConfig = None) -> LatticeOperator:
    """Charge current i[H, X_direction] assembled hop-by-hop.

    Each listed hop x -> x - y contributes -i y_j times its full (Peierls
    phased, disordered) amplitude, plus the conjugate; y is the physical
    displacement, so hops wrapped around a periodic axis carry their true
    y_j and the operator is seam-free.  Accepts BulkModel or HalfSpaceModel
    with the matching volume.
    """
    half = isinstance(model, HalfSpaceModel)
    bulk = model.bulk if half else model
    if volume.d != bulk.d:
        raise ValueError("volume dimension mismatch")
    if not 0 <= direction < bulk.d:
        raise ValueError("direction out of range")
    if half and volume.bc[-1] != "halfspace":
        raise ValueError("half-space model needs a half-space volume")
    if not half and "halfspace" in volume.bc:
        raise ValueError("use a HalfSpaceModel on half-space volumes")
    if disorder is None:
        disorder = clean_disorder(model, volume)
    n = bulk.N
    dim = volume.dim(n)
    diag = np.zeros((dim, dim), dtype=complex)
    tri = np.zeros((dim, dim), dtype=complex)
    coords = volume.coords()
    bp = bulk.field.B_plus
    for t, hop in enumerate(bulk.hoppings):
        y = np.asarray(hop.y, dtype=np.int64)
        if y[direction] == 0:
            continue
        scale = 1.0 + hop.lam * disorder.draws[t]
        _accumulate_hop(diag, tri, coords, y, -1j * y[direction] * hop.W,
                        scale, volume, bp, n)
    if half:
        bdraws = disorder.boundary_draws
        npar = int(np.prod(volume.sizes[:-1]))
        if bdraws is None:
            bdraws = np.zeros((len(model.boundary_terms), npar))
        par = FiniteVolume(volume.sizes[:-1], volume.bc[:-1]) if volume.d > 1 else None
        pcoords = par.coords() if par is not None else np.zeros((1, 0), dtype=np.int64)
        for t, term in enumerate(model.boundary_terms):
            y = np.asarray(tuple(term.y) + (term.n - term.m,), dtype=np.int64)
            if y[direction] == 0:
                continue
            layer = np.concatenate(
                [pcoords, np.full((pcoords.shape[0], 1), term.n, dtype=np.int64)],
                axis=1)
            scale = 1.0 + term.lam * bdraws[t]
            _accumulate_hop(diag, tri, layer, y, -1j * y[direction] * term.W,
                            scale, volume, bp, n)
    cur = diag + tri + tri.conj().T
    assert np.max(np.abs(cur - cur.conj().T)) < 1e-12
    return LatticeOperator(matrix=cur, volume=volume, fiber=n, model=model)


# ---------------------------------------------------------------------------
# Bloch fibers


def _require_clean_zero_field(model: BulkModel) -> None:
    if not model.field.is_zero():
        raise BlochFieldError("bloch-requires-zero-field")
    if any(hop.lam != 0.0 for hop in model.hoppings):
        raise BlochDisorderError("bloch-requires-clean")


def bloch_fiber(model: BulkModel, k) -> np.ndarray:
    """H_k = sum_y e^{i<y|k>} W_y for a clean zero-field model."""
    _require_clean_zero_field(model)
    k = np.asarray(k, dtype=float)
    if k.shape != (model.d,):
        raise ValueError("momentum must have d components")
    hk = np.zeros((model.N, model.N), dtype=complex)
    for hop in model.hoppings:
        y = np.asarray(hop.y)
        if not np.any(y):
            hk += hop.W
        else:
            ph = np.exp(1j * float(k @ y))
            hk += ph * hop.W + np.conj(ph) * hop.W.conj().T
    return hk


def magnetic_bloch_fiber(model: BulkModel, q: int, k) -> np.ndarray:
    """Bloch fiber of a d=2 model with rational flux, supercell q along axis 0.

    Requires q B_10 in 2 pi Z (hop phases periodic with period q in x_0). The
    fiber acts on C^N tensor C^q with k = (k_0, k_1) in [0, 2pi)^2, where k_0
    is the Bloch phase per q-step (supercell momentum); at q = 1 and zero
    field it reduces to bloch_fiber.
    """
    if model.d != 2:
        raise ValueError("magnetic fibers implemented for d = 2 only")
    if any(hop.lam != 0.0 for hop in model.hoppings):
        raise BlochDisorderError("bloch-requires-clean")
    b = model.field.B_plus[1, 0]
    phi = q * b / TWO_PI
    if abs(phi - round(phi)) > 1e-9:
        raise FluxMismatchError(f"flux-mismatch: q B_10 = {phi} x 2pi not integral")
    k = np.asarray(k, dtype=float)
    n = model.N
    hk = np.zeros((q, n, q, n), dtype=complex)
    for hop in model.hoppings:
        y0, y1 = hop.y
        if y0 == 0 and y1 == 0:
            for r in range(q):
                hk[r, :, r, :] += hop.W
            continue
        for r in range(q):
            c, rp = divmod(r - y0, q)
            # Landau phase at target x_0 = r plus supercell Bloch factors
            ph = np.exp(1j * (y1 * b * r - 0.5 * y1 * b * y0
                              - c * k[0] + y1 * k[1]))
            hk[r, :, rp, :] += ph * hop.W
            hk[rp, :, r, :] += np.conj(ph) * hop.W.conj().T
    hk = hk.reshape(q * n, q * n)
    assert np.max(np.abs(hk - hk.conj().T)) < 1e-11
    return hk


def halfspace_fiber(model: HalfSpaceModel, depth: int, k_par) -> np.ndarray:
    """Parallel Bloch fiber of a clean zero-field half-space model.

    Returns the (depth N) x (depth N) transverse block at parallel momentum
    k_par in [0, 2pi)^(d-1); layer-major indexing (layer, orbital).
    """
    bulk = model.bulk
    _require_clean_zero_field(bulk)
    if any(t.lam != 0.0 for t in model.boundary_terms):
        raise BlochDisorderError("bloch-requires-clean")
    if model.R >= depth:
        raise BoundaryDepthError("boundary-depth")
    k_par = np.asarray(k_par, dtype=float)
    if k_par.shape != (bulk.d - 1,):
        raise ValueError("parallel momentum must have d-1 components")
    n = bulk.N
    hk = np.zeros((depth, n, depth, n), dtype=complex)
    for hop in bulk.hoppings:
        y = np.asarray(hop.y)
        ypar, yd = y[:-1], int(y[-1])
        ph = np.exp(1j * float(k_par @ ypar))
        for r in range(depth):
            m = r - yd
            if 0 <= m < depth:
                hk[r, :, m, :] += ph * hop.W
                if np.any(y):
                    hk[m, :, r, :] += np.conj(ph) * hop.W.conj().T
    for term in model.boundary_terms:
        ph = np.exp(1j * float(k_par @ np.asarray(term.y)))
        hk[term.n, :, term.m, :] += ph * term.W
        if not term.is_diagonal:
            hk[term.m, :, term.n, :] += np.conj(ph) * term.W.conj().T
    hk = hk.reshape(depth * n, depth * n)
    assert np.max(np.abs(hk - hk.conj().T)) < 1e-11
    return hk


# ---------------------------------------------------------------------------
# magnetic translations and gauge


def magnetic_translation(field: MagneticField, volume: FiniteVolume, x) -> np.ndarray:
    """Unitary V^x = e^{i<X|B_+|x>} S^x on the torus (site space only tensor 1).

    Requires integral flux through every wrapped plaquette-torus and
    L_j <x|B|e_j> in 2 pi Z for every axis (else the wrapped operator is not
    single-valued).
    """
    if any(b != "periodic" for b in volume.bc):
        raise ValueError("magnetic translations need a fully periodic volume")
    _check_flux(field, volume)
    x = np.asarray(x, dtype=np.int64)
    b = field.B
    for j in range(volume.d):
        phi = volume.sizes[j] * float(x @ b[:, j]) / TWO_PI
        if abs(phi - round(phi)) > 1e-9:
            raise FluxMismatchError(
                f"flux-mismatch: translation breaks wrap consistency on axis {j}")
    targets = volume.coords()
    nsites = volume.nsites
    S = targets - x[None, :]
    chi = np.ones(nsites, dtype=complex)
    keep = np.ones(nsites, dtype=bool)
    _wrap_sources(S, chi, keep, volume, field.B_plus)
    phase = np.exp(1j * (targets @ (field.B_plus @ x))) * chi
    v = np.zeros((nsites, nsites), dtype=complex)
    v[np.arange(nsites), volume.ravel(S)] = phase
    return v


def symmetric_gauge_transform(field: MagneticField, volume: FiniteVolume) -> np.ndarray:
    """Diagonal unitary e^{(i/2)<X|B_+|X>} mapping symmetric to Landau gauge.

    Conjugating the symmetric-gauge Hamiltonian (hop phases e^{(i/2)<y|B|x>})
    with this matrix yields the Landau assembly; site space only.
    """
    pos = volume.coords().astype(float)
    quad = 0.5 * np.einsum("si,ij,sj->s", pos, field.B_plus, pos)
    return np.diag(np.exp(1j * quad))
