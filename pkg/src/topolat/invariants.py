"""Bulk and boundary topological invariants on finite volumes.

Momentum-space routes (winding / Chern Riemann sums with spectral
derivatives, an integer-exact plaquette field strength for d=2),
real-space trace-per-volume routes on open boxes, Fredholm indices by
localized singular-value counting, boundary invariants and currents on
half-space slabs, chiral polarization and edge zero-mode counting.

Convention: hop assembly attaches e^{+i<k|y>} to a hop of displacement y,
so the position derivation i[.,X_j] acts on Bloch fibers as -d/dk_j.
Even-degree cocycles contain an even number of derivatives and do not
feel the sign; odd-degree ones do, and all k-space formulas below carry
it explicitly.  The overall orientation is pinned by winding(S) = +1 for
the right shift S, which fixes winding -1 for the two-band chain with
sigma_+ hopping on (-1, 1); see catalog.analytic_chern.
"""

from dataclasses import dataclass, field
from itertools import permutations
from math import factorial
from typing import Callable, Optional, Sequence

import numpy as np

from .clifford import CliffordRep, dirac_phase
from .errors import (
    AmbiguousKernelError,
    DeltaInSpectrumError,
    DepthCutError,
    NoGapError,
    NotChiralError,
    WindowError,
)
from .model import (
    BulkModel,
    FiniteVolume,
    HalfSpaceModel,
    LatticeOperator,
    _require_clean_zero_field,
    halfspace_fiber,
)
from .spectral import (
    BoundaryOperators,
    FermiData,
    SmoothStep,
    SpectralData,
    boundary_operators,
    chiral_fermi_data,
    diagonalize,
    fermi_data,
    grading_masks,
)

QUANT_TOL = 0.1


def norm_const(n: int) -> complex:
    """Normalization Lambda_n of the top cocycle of degree n."""
    if n <= 0:
        raise ValueError("degree must be positive")
    if n % 2 == 0:
        return (2j * np.pi) ** (n // 2) / factorial(n // 2)
    dfact = 1
    for m in range(n, 0, -2):
        dfact *= m
    return 1j * (1j * np.pi) ** ((n - 1) // 2) / dfact


def _signed_perms(n: int):
    """(permutation, parity sign) pairs of {0..n-1}."""
    out = []
    for perm in permutations(range(n)):
        inv = sum(1 for i in range(n) for j in range(i + 1, n)
                  if perm[i] > perm[j])
        out.append((perm, -1.0 if inv % 2 else 1.0))
    return out


# ---------------------------------------------------------------------------
# results and trace windows


@dataclass(frozen=True)
class InvariantResult:
    """Real invariant value with its nearest quantized point and residual."""

    value: float
    rounded: Optional[float]
    residual: float
    meta: dict = field(default_factory=dict)


def _quantized(value: float, meta: dict, tol: float = QUANT_TOL,
               lattice: float = 1.0) -> InvariantResult:
    near = lattice * round(value / lattice)
    residual = abs(value - near)
    if residual < tol:
        rounded = int(near) if lattice == 1.0 else float(near)
    else:
        rounded = None
        meta["unquantized"] = True
    return InvariantResult(value=float(value), rounded=rounded,
                           residual=float(residual), meta=meta)


@dataclass(frozen=True)
class TraceWindow:
    """Centered per-axis window over which per-site traces are averaged.

    The window must stay strictly interior on axes with a boundary; this is
    also the default on periodic axes because commutators with X need a
    seam-free neighborhood.
    """

    fraction: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.fraction <= 1.0:
            raise ValueError("window fraction must lie in (0, 1]")

    def widths(self, volume: FiniteVolume, axes: Sequence[int]) -> dict:
        out = {}
        for a in axes:
            length = volume.sizes[a]
            w = min(length, max(1, int(round(self.fraction * length))))
            lo = (length - w) // 2
            hi = lo + w
            if volume.bc[a] != "periodic" and (lo < 1 or hi > length - 1):
                raise WindowError(
                    f"window-too-large: axis {a} needs interior margin "
                    f"(length {length}, window {w})")
            out[a] = (lo, hi)
        return out

    def site_mask(self, volume: FiniteVolume, axes: Sequence[int] = None) -> np.ndarray:
        if axes is None:
            axes = range(volume.d)
        coords = volume.coords()
        mask = np.ones(volume.nsites, dtype=bool)
        for a, (lo, hi) in self.widths(volume, axes).items():
            mask &= (coords[:, a] >= lo) & (coords[:, a] < hi)
        return mask


def _expand_mask(site_mask: np.ndarray, fiber: int) -> np.ndarray:
    return np.repeat(site_mask, fiber)


def _axis_positions(volume: FiniteVolume, axis: int, fiber: int) -> np.ndarray:
    return volume.coords()[:, axis].astype(float).repeat(fiber)


def _xcomm(mat: np.ndarray, xrow: np.ndarray, xcol: np.ndarray) -> np.ndarray:
    """[M, X] for diagonal X with possibly distinct row/column positions."""
    return mat * xcol[None, :] - xrow[:, None] * mat


# ---------------------------------------------------------------------------
# momentum grids


def _as_grid(grid, d: int) -> tuple:
    if np.isscalar(grid):
        return (int(grid),) * d
    grid = tuple(int(g) for g in grid)
    if len(grid) != d:
        raise ValueError("grid must give one size per axis")
    return grid


def _fiber_grid(model: BulkModel, grid: tuple) -> np.ndarray:
    """Bloch fibers H(k) on the uniform grid, shape grid + (N, N)."""
    _require_clean_zero_field(model)
    ks = np.meshgrid(*[2.0 * np.pi * np.arange(n) / n for n in grid],
                     indexing="ij")
    h = np.zeros(grid + (model.N, model.N), dtype=complex)
    for hop in model.hoppings:
        y = np.asarray(hop.y)
        if not np.any(y):
            h += hop.W
            continue
        phase = np.exp(1j * sum(ks[j] * y[j] for j in range(model.d)))
        h += phase[..., None, None] * hop.W
        h += np.conj(phase)[..., None, None] * hop.W.conj().T
    return h


def _grid_bands(h: np.ndarray, mu: float):
    """Batched eigendecomposition plus a uniform-filling gap check."""
    w, v = np.linalg.eigh(h)
    counts = (w < mu).sum(axis=-1)
    r = int(counts.flat[0])
    if counts.min() != counts.max():
        raise NoGapError("no-gap: occupied band count varies over the grid")
    below = float(w[..., r - 1].max()) if r > 0 else -np.inf
    above = float(w[..., r].min()) if r < w.shape[-1] else np.inf
    if not below < mu < above:
        raise NoGapError("no-gap: mu touches the spectrum on the grid")
    return w, v, r, (below, above)


def _grid_flat_unitary(w: np.ndarray, v: np.ndarray, J: np.ndarray) -> np.ndarray:
    """Off-diagonal block of sgn(H(k)) over the grid (rows -, columns +)."""
    plus, minus = grading_masks(J)
    sgn = np.where(w < 0.0, -1.0, 1.0)
    q = np.einsum("...ae,...e,...be->...ab", v, sgn, v.conj())
    u = q[..., minus[:, None], plus[None, :]]
    probe = u.reshape(-1, u.shape[-2], u.shape[-1])[0]
    if np.max(np.abs(probe.conj().T @ probe - np.eye(probe.shape[0]))) > 1e-8:
        raise NotChiralError("not-chiral: flat-band block is not unitary")
    return u


def _fft_derivative(arr: np.ndarray, axis: int) -> np.ndarray:
    n = arr.shape[axis]
    m = np.fft.fftfreq(n, 1.0 / n)
    if n % 2 == 0:
        m[n // 2] = 0.0  # symmetric choice for the unpaired Nyquist mode
    shape = [1] * arr.ndim
    shape[axis] = n
    return np.fft.ifft(np.fft.fft(arr, axis=axis) * (1j * m).reshape(shape),
                       axis=axis)


def _central_derivative(arr: np.ndarray, axis: int) -> np.ndarray:
    h = 2.0 * np.pi / arr.shape[axis]
    return (np.roll(arr, -1, axis=axis) - np.roll(arr, 1, axis=axis)) / (2.0 * h)


def _k_derivative(arr: np.ndarray, axis: int, stencil: str) -> np.ndarray:
    if stencil == "fft":
        return _fft_derivative(arr, axis)
    if stencil == "central":
        return _central_derivative(arr, axis)
    raise ValueError(f"unknown stencil {stencil!r}")


# ---------------------------------------------------------------------------
# momentum-space sums (sample-level; used directly by property tests)


def odd_chern_sum(u: np.ndarray, form: str = "pairing",
                  stencil: str = "fft") -> complex:
    """Riemann sum of the degree-d odd cocycle from U(k) samples.

    u has shape grid + (r, r) on a uniform BZ grid; the derivation maps to
    -d/dk_j here.  'pairing' evaluates the alternating-adjoint form
    tr (U*-1) prod_j d(U^{*_(j-1)}), which is the K-theory pairing and the
    value the Fredholm index reproduces; 'product' is tr prod_j U* dU_j,
    equal to (-1)^((d-1)/2) times the pairing value (they agree at d = 1).
    """
    d = u.ndim - 2
    if d < 1 or d % 2 == 0:
        raise ValueError("odd cocycles need an odd number of grid axes")
    du = [-_k_derivative(u, ax, stencil) for ax in range(d)]
    uh = u.conj().swapaxes(-1, -2)
    total = 0.0 + 0.0j
    if form == "product":
        a = [uh @ du[j] for j in range(d)]
        for perm, sign in _signed_perms(d):
            m = a[perm[0]]
            for j in perm[1:]:
                m = m @ a[j]
            total += sign * np.trace(m, axis1=-2, axis2=-1).mean()
    elif form == "pairing":
        eye = np.eye(u.shape[-1])
        lead = uh - eye
        for perm, sign in _signed_perms(d):
            m = lead
            for pos, ax in enumerate(perm):
                f = du[ax] if pos % 2 == 0 else du[ax].conj().swapaxes(-1, -2)
                m = m @ f
            total += sign * np.trace(m, axis1=-2, axis2=-1).mean()
    else:
        raise ValueError(f"unknown form {form!r}")
    return norm_const(d) * total


def even_chern_sum(p: np.ndarray, stencil: str = "fft") -> complex:
    """Riemann sum of the degree-d even cocycle from P(k) samples."""
    d = p.ndim - 2
    if d < 2 or d % 2:
        raise ValueError("even cocycles need an even number of grid axes")
    dp = [-_k_derivative(p, ax, stencil) for ax in range(d)]
    total = 0.0 + 0.0j
    for perm, sign in _signed_perms(d):
        m = p
        for ax in perm:
            m = m @ dp[ax]
        total += sign * np.trace(m, axis1=-2, axis2=-1).mean()
    return norm_const(d) * total


def plaquette_chern(frames: np.ndarray) -> float:
    """Lattice field strength of an occupied frame bundle on a 2d grid.

    frames has shape (n1, n2, N, r); the result is an exact integer (up to
    roundoff) whenever every link determinant is nonzero.  Oriented to agree
    with even_chern_sum.
    """
    if frames.ndim != 4:
        raise ValueError("frames must be (n1, n2, N, r)")
    links = []
    for axis in (0, 1):
        shifted = np.roll(frames, -1, axis=axis)
        ov = np.einsum("...na,...nb->...ab", frames.conj(), shifted)
        det = np.linalg.det(ov)
        if np.min(np.abs(det)) < 1e-12:
            raise NoGapError("no-gap: singular plaquette link, refine the grid")
        links.append(det / np.abs(det))
    u1, u2 = links
    curl = u1 * np.roll(u2, -1, axis=0) * np.conj(np.roll(u1, -1, axis=1)) \
        * np.conj(u2)
    return -float(np.angle(curl).sum() / (2.0 * np.pi))


# ---------------------------------------------------------------------------
# momentum-space invariants


def winding_k(model: BulkModel, grid, stencil: str = "fft",
              form: str = "pairing") -> InvariantResult:
    """Top odd Chern number of the Fermi unitary of a clean chiral model."""
    if not model.chiral:
        raise NotChiralError("not-chiral: winding needs a chiral model")
    if abs(model.mu) > 1e-12:
        raise NotChiralError("not-chiral: chiral invariants live at mu = 0")
    if model.d % 2 == 0:
        raise ValueError("winding_k needs odd dimension")
    grid = _as_grid(grid, model.d)
    h = _fiber_grid(model, grid)
    w, v, r, gap = _grid_bands(h, 0.0)
    if 2 * r != model.N:
        raise NoGapError("no-gap: chiral model is not half filled")
    u = _grid_flat_unitary(w, v, model.J)
    raw = odd_chern_sum(u, form=form, stencil=stencil)
    meta = {"grid": grid, "gap": gap, "imag": abs(raw.imag),
            "form": form, "stencil": stencil}
    return _quantized(raw.real, meta)


def chern_even_k(model: BulkModel, grid, mu: float = None) -> InvariantResult:
    """Top even Chern number of the Fermi projection of a clean model.

    For d = 2 the value is the plaquette (link-variable) field strength,
    integer-exact on gapped grids; the raw Riemann sum of the curvature
    cocycle is reported in meta["riemann"].  Higher even d uses the Riemann
    sum directly.
    """
    if model.d % 2:
        raise ValueError("chern_even_k needs even dimension")
    mu = model.mu if mu is None else float(mu)
    grid = _as_grid(grid, model.d)
    h = _fiber_grid(model, grid)
    w, v, r, gap = _grid_bands(h, mu)
    if r == 0 or r == model.N:
        return _quantized(0.0, {"grid": grid, "gap": gap, "trivial": True})
    frames = v[..., :r]
    p = frames @ frames.conj().swapaxes(-1, -2)
    riemann = even_chern_sum(p)
    meta = {"grid": grid, "gap": gap, "riemann": riemann.real,
            "imag": abs(riemann.imag)}
    if model.d == 2:
        value = plaquette_chern(frames)
        return _quantized(value, meta, tol=1e-6)
    return _quantized(riemann.real, meta)


def bulk_gap_k(model: BulkModel, grid, mu: float = 0.0) -> tuple:
    """(below, above) edges of the bulk spectral gap around mu on a k-grid."""
    grid = _as_grid(grid, model.d)
    h = _fiber_grid(model, grid)
    _, _, _, gap = _grid_bands(h, mu)
    return gap


# ---------------------------------------------------------------------------
# real-space invariants on open boxes


def chern_real_space(op: LatticeOperator, mu: float = 0.0,
                     axes: Sequence[int] = None,
                     window: TraceWindow = TraceWindow(),
                     J: np.ndarray = None) -> InvariantResult:
    """Trace-per-volume cocycle of P (even degree) or U_F (odd) on a box.

    axes picks the index set I; position operators are the true box
    coordinates.  Even |I| evaluates Lambda sum_rho (-1)^rho
    tr_win P prod_j i[P, X_rho_j]; odd |I| the alternating-adjoint form
    Lambda sum_rho (-1)^rho tr_win (U*-1) prod_j i[U^{*_(j-1)}, X_rho_j],
    the same orientation the half-line Fredholm index reproduces.
    """
    volume = op.volume
    axes = tuple(range(volume.d)) if axes is None else tuple(axes)
    if len(set(axes)) != len(axes):
        raise ValueError("repeated axes")
    for a in axes:
        if volume.bc[a] != "open":
            raise ValueError(f"axis {a} must be open for position commutators")
    site_mask = window.site_mask(volume, axes=range(volume.d))
    nwin = int(site_mask.sum())
    meta = {"sizes": volume.sizes, "axes": axes, "mu": mu,
            "window_sites": nwin}
    if len(axes) % 2 == 0:
        fd = fermi_data(diagonalize(op), mu=mu)
        meta["gap"] = fd.gap
        p = fd.projection
        xd = {a: _axis_positions(volume, a, op.fiber) for a in axes}
        mats = {a: 1j * _xcomm(p, xd[a], xd[a]) for a in axes}
        acc = np.zeros(op.dim, dtype=complex)
        for perm, sign in _signed_perms(len(axes)):
            m = p
            for pos_idx in perm:
                m = m @ mats[axes[pos_idx]]
            acc += sign * np.diagonal(m)
        mask = _expand_mask(site_mask, op.fiber)
    else:
        if abs(mu) > 1e-12:
            raise NotChiralError("not-chiral: odd cocycles live at mu = 0")
        if J is None:
            J = np.kron(np.eye(volume.nsites), op.model.J)
        plus, minus = grading_masks(J)
        # polar-phase Fermi unitary: stays defined through exact edge zero
        # modes, which would put the eigenbasis sgn(H) on a knife edge
        fd = chiral_fermi_data(op, J=J)
        u = fd.fermi_unitary
        meta["gap"] = fd.gap[1]
        sites = np.repeat(np.arange(volume.nsites), op.fiber)
        rs, cs = sites[minus], sites[plus]
        coords = volume.coords()
        com = {a: 1j * _xcomm(u, coords[rs, a].astype(float),
                              coords[cs, a].astype(float)) for a in axes}
        # adjoint of i[u, X] is i[u*, X], so the alternation is free
        lead = u.conj().T - np.eye(u.shape[0])
        acc = np.zeros(plus.size, dtype=complex)
        for perm, sign in _signed_perms(len(axes)):
            m = lead
            for j, pos_idx in enumerate(perm):
                f = com[axes[pos_idx]]
                m = m @ (f if j % 2 == 0 else f.conj().T)
            acc += sign * np.diagonal(m)
        mask = site_mask[cs]
    raw = norm_const(len(axes)) * acc[mask].sum() / nwin
    meta["imag"] = abs(raw.imag)
    return _quantized(raw.real, meta)


def chiral_polarization(fermi: FermiData, direction: int,
                        volume: FiniteVolume, J: np.ndarray,
                        window: TraceWindow = TraceWindow()) -> float:
    """Sublattice dipole moment i tr_win(P_F J dP_F) per site; values in Z/2."""
    if fermi.fermi_unitary is None:
        raise NotChiralError("not-chiral: polarization needs chiral Fermi data")
    if volume.bc[direction] != "open":
        raise ValueError("polarization direction must be an open axis")
    jd = np.asarray(J)
    fiber = (jd.size if jd.ndim == 1 else jd.shape[0]) // volume.nsites
    x = _axis_positions(volume, direction, fiber)
    smask = window.site_mask(volume, axes=range(volume.d))
    mask = _expand_mask(smask, fiber)
    nwin = int(smask.sum())
    if fermi.projection is None:
        # blocks-only data: with P = (1 - Q)/2 and Q = offdiag(u*, u) the
        # windowed trace reduces to quarter-size diagonals,
        #   -P J [P, X] -> (1/4) diag(u* C) on +, (1/4) diag(u C*) on -,
        # where C = [u, X] between the two gradings
        u = fermi.fermi_unitary
        plus, minus = grading_masks(jd)
        c = _xcomm(u, x[minus], x[plus])
        dplus = np.einsum("ji,ji->i", u.conj(), c)
        dminus = np.einsum("ij,ij->i", u, c.conj())
        val = dplus[mask[plus]].sum() + dminus[mask[minus]].sum()
        return float(val.real / (4.0 * nwin))
    p = fermi.projection
    pj = p * jd[None, :] if jd.ndim == 1 else p @ jd
    m = 1j * (pj @ (1j * _xcomm(p, x, x)))
    return float(np.diagonal(m)[mask].sum().real / nwin)


def zero_mode_chirality(spec: SpectralData, delta: float, J: np.ndarray,
                        volume: FiniteVolume = None,
                        collar_fraction: float = 0.5) -> int:
    """Signed count tr(J chi(|h| <= delta)) near the boundary of a half line.

    On a finite segment both ends carry zero modes with opposite signature;
    the collar restricts the trace to the near-boundary part (layer index
    below collar_fraction of the open axis), which converges to the
    half-infinite count.
    """
    e = spec.eigenvalues
    scale = max(float(np.max(np.abs(e))), 1.0)
    if float(np.min(np.abs(np.abs(e) - delta))) < 1e-8 * scale:
        raise DeltaInSpectrumError(
            "delta-in-spectrum: move delta off the point spectrum")
    sel = np.abs(e) <= delta
    if not np.any(sel):
        return 0
    v = spec.eigenvectors[:, sel]
    jv = J @ v
    if volume is not None:
        fiber = v.shape[0] // volume.nsites
        depth = volume.coords()[:, -1]
        collar = depth < collar_fraction * volume.sizes[-1]
        jv = jv * _expand_mask(collar, fiber)[:, None]
    val = float(np.einsum("ie,ie->", v.conj(), jv).real)
    return int(round(val))


# ---------------------------------------------------------------------------
# Fredholm indices by localized singular-value counting


def _classified_index(t: np.ndarray, inner_mass_col: Callable,
                      inner_mass_row: Callable,
                      tau_factor: float = 1e-6) -> int:
    """dim ker T - dim ker T*, keeping only boundary-localized kernel vectors.

    A sharp truncation of a Fredholm operator pairs every genuine kernel
    vector with a spurious one living at the truncation wall (T and T* have
    identical singular values), so raw counting always returns zero.  Near
    -zero singular vectors are therefore classified by where their mass
    sits: inside the inner region they count, at the wall they do not.
    """
    uvec, s, vh = np.linalg.svd(t)
    smax = float(s.max()) if s.size else 0.0
    if smax == 0.0:
        return 0
    tau = tau_factor * smax
    if np.any((s > tau / 10.0) & (s < tau * 10.0)):
        raise AmbiguousKernelError(
            "ambiguous-kernel: singular values cluster at the zero threshold")
    near = np.nonzero(s < tau)[0]
    ker_t = 0
    ker_tstar = 0
    for idx in near:
        for mass_fn, vec, bucket in (
                (inner_mass_col, vh[idx].conj(), "t"),
                (inner_mass_row, uvec[:, idx], "tstar")):
            mass = float(mass_fn(vec))
            if not (mass < 1.0 / 3.0 or mass > 2.0 / 3.0):
                raise AmbiguousKernelError(
                    "ambiguous-kernel: kernel vector is not localized")
            if mass > 0.5:
                if bucket == "t":
                    ker_t += 1
                else:
                    ker_tstar += 1
    return ker_t - ker_tstar


def _mass_fraction(inner: np.ndarray) -> Callable:
    def fn(vec: np.ndarray) -> float:
        w = np.abs(vec) ** 2
        return float(w[inner].sum() / w.sum())
    return fn


def fredholm_index_halfline(u, positions: np.ndarray = None,
                            tau_factor: float = 1e-6) -> int:
    """Index of Pi U Pi with Pi the restriction to nonnegative sites (d=1).

    u is a unitary LatticeOperator on a segment centered at the origin, or a
    plain matrix with per-index integer positions.  Kernel vectors must
    localize in the inner half of the kept window to count; wall artifacts
    of the truncation are discarded.
    """
    if isinstance(u, LatticeOperator):
        mat = u.matrix
        positions = u.volume.centered_positions()[:, 0].repeat(u.fiber)
    else:
        mat = np.asarray(u)
        if positions is None:
            raise ValueError("plain matrices need per-index positions")
    if isinstance(positions, tuple):
        pos_row, pos_col = positions
    else:
        pos_row = pos_col = np.asarray(positions)
    rows = np.nonzero(pos_row >= 0)[0]
    cols = np.nonzero(pos_col >= 0)[0]
    t = mat[np.ix_(rows, cols)]
    half_row = pos_row[rows] < (pos_row[rows].max() + 1) / 2.0
    half_col = pos_col[cols] < (pos_col[cols].max() + 1) / 2.0
    return _classified_index(t, _mass_fraction(half_col),
                             _mass_fraction(half_row), tau_factor)


def _inner_box_mask(positions: np.ndarray, sizes: tuple) -> np.ndarray:
    """Sites within the centered half-box (quarter-size margin per axis)."""
    keep = np.ones(positions.shape[0], dtype=bool)
    for j, length in enumerate(sizes):
        keep &= np.abs(positions[:, j] + 0.5) <= length / 4.0
    return keep


def fredholm_index_dirac(fermi: FermiData, rep: CliffordRep,
                         volume: FiniteVolume, x0=None,
                         J: np.ndarray = None,
                         tau_factor: float = 1e-6) -> int:
    """Index pairing of the Fermi data with the Dirac phase at x0.

    Even d: Ind(P G_x0 P) on range(P).  Odd d: -Ind(E_x0 U E_x0) on
    range(E), which equals the top odd Chern number.  Both are computed by
    localized singular-value counting on the open box.
    """
    d = volume.d
    if rep.n != d:
        raise ValueError("Clifford generator count must match the dimension")
    if x0 is None:
        x0 = (0.5,) * d
    phase = dirac_phase(rep, volume, x0)

    if d % 2 == 0:
        p = fermi.projection
        fiber = p.shape[0] // volume.nsites
        w, vecs = np.linalg.eigh(p)
        occ = vecs[:, w > 0.5]
        r = occ.shape[1]
        q2 = rep.dim // 2
        gsite = phase.G_blocks  # (nsites, q2, q2)
        t = np.empty((r * q2, r * q2), dtype=complex)
        for a in range(q2):
            for b in range(q2):
                gvec = gsite[:, a, b].repeat(fiber)
                t[a::q2, b::q2] = occ.conj().T @ (gvec[:, None] * occ)
        inner_sites = _inner_box_mask(phase.positions, volume.sizes)
        inner_idx = _expand_mask(inner_sites, fiber)

        def mass(vec: np.ndarray) -> float:
            # lift range(P) (x) spinor coefficients back to lattice sites
            psi = occ @ vec.reshape(r, q2)
            w2 = (np.abs(psi) ** 2).sum(axis=1)
            return float(w2[inner_idx].sum() / w2.sum())

        return _classified_index(t, mass, mass, tau_factor)

    # odd d: compress U_F between the ranges of the site-local projections E
    u = fermi.fermi_unitary
    if u is None:
        raise NotChiralError("not-chiral: odd index pairing needs U_F")
    dim = fermi.projection.shape[0]
    fiber = dim // volume.nsites
    if J is None:
        jd = np.ones(fiber)
        jd[fiber // 2:] = -1.0
        J = np.kron(np.eye(volume.nsites), np.diag(jd))
    plus, minus = grading_masks(J)
    sites = np.repeat(np.arange(volume.nsites), fiber)
    rs, cs = sites[minus], sites[plus]

    eb = phase.E_blocks  # (nsites, q, q), ranks may vary only for q = 1
    q = rep.dim
    ew, ev = np.linalg.eigh(eb)
    ranks = (ew > 0.5).sum(axis=-1)
    if q == 1:
        keep_r = np.nonzero(ranks[rs] == 1)[0]
        keep_c = np.nonzero(ranks[cs] == 1)[0]
        t = u[np.ix_(keep_r, keep_c)]
        inner = _inner_box_mask(phase.positions, volume.sizes)
        m_col = _mass_fraction(inner[cs[keep_c]])
        m_row = _mass_fraction(inner[rs[keep_r]])
    else:
        q2 = q // 2
        if not np.all(ranks == q2):
            raise ValueError("unexpected rank profile of the Dirac projection")
        y = ev[:, :, q - q2:]  # (nsites, q, q2) orthonormal range frames
        gram = np.einsum("ita,jtb->iajb", y[rs].conj(), y[cs])
        t = (u[:, None, :, None] * gram).reshape(
            u.shape[0] * q2, u.shape[1] * q2)
        inner = _inner_box_mask(phase.positions, volume.sizes)
        m_col = _mass_fraction(np.repeat(inner[cs], q2))
        m_row = _mass_fraction(np.repeat(inner[rs], q2))
    raw = _classified_index(t, m_col, m_row, tau_factor)
    return -raw


def index_trace_formula(t: np.ndarray, weight_col, weight_row,
                        power: int) -> float:
    """Windowed trace form tr W_c (1-T*T)^n - tr W_r (1-TT*)^n.

    The spatial weights single out the boundary-localized defect; on a sharp
    truncation the unweighted version vanishes identically.  Cross-check
    only; the singular-value route is the primary.
    """
    eye = np.eye(t.shape[1])
    a = eye - t.conj().T @ t
    b = np.eye(t.shape[0]) - t @ t.conj().T
    an, bn = a, b
    for _ in range(power - 1):
        an = an @ a
        bn = bn @ b

    def wtrace(mat, weight):
        weight = np.asarray(weight)
        if weight.ndim == 1:
            return float((np.diagonal(mat) * weight).sum().real)
        return float(np.trace(weight @ mat).real)

    return wtrace(an, weight_col) - wtrace(bn, weight_row)


# ---------------------------------------------------------------------------
# boundary invariants on slabs


def _transverse_mask(volume: FiniteVolume, fiber: int, cut: int) -> np.ndarray:
    return _expand_mask(volume.coords()[:, -1] < cut, fiber)


def _layer_value(diag: np.ndarray, depth_idx: np.ndarray, cut: int,
                 tail_tol: float):
    """Sum layer contributions to the cut and police the decay tail."""
    layers = np.zeros(cut, dtype=complex)
    for tlayer in range(cut):
        layers[tlayer] = diag[depth_idx == tlayer].sum()
    total = layers.sum()
    tail = abs(layers[cut - 1])
    if tail > tail_tol * abs(total) and tail > 1e-12:
        raise DepthCutError(
            f"depth-cut-too-small: layer {cut - 1} still carries {tail:.2e}")
    return total, tail


def boundary_invariant(ops: BoundaryOperators, volume: FiniteVolume,
                       axes: Sequence[int] = None,
                       window: TraceWindow = TraceWindow(),
                       depth_cut: int = None,
                       tail_tol: float = 1e-6) -> InvariantResult:
    """Boundary cocycle of u_Delta (odd |axes|) or p_Delta (even) on a slab.

    Per-site traces are averaged over a parallel window and summed over
    transverse layers up to depth_cut (default half the slab, keeping the
    far wall out); the integrand must have decayed by the cut.
    """
    if volume.bc[-1] != "halfspace":
        raise ValueError("boundary invariants need a half-space volume")
    axes = tuple(range(volume.d - 1)) if axes is None else tuple(axes)
    if not axes or any(a >= volume.d - 1 for a in axes):
        raise ValueError("axes must be parallel (exclude the last axis)")
    cut = volume.sizes[-1] // 2 if depth_cut is None else int(depth_cut)
    if not 0 < cut <= volume.sizes[-1]:
        raise ValueError("depth cut out of range")
    odd = len(axes) % 2 == 1
    a_op = ops.u_delta if odd else ops.p_delta
    if a_op is None:
        raise NotChiralError("not-chiral: even boundary cocycle needs p_Delta")
    fiber = a_op.shape[0] // volume.nsites
    par_mask = window.site_mask(volume, axes=axes)
    ncols = int((par_mask & (volume.coords()[:, -1] == 0)).sum())
    xd = {a: _axis_positions(volume, a, fiber) for a in axes}
    if odd:
        lead = a_op.conj().T - np.eye(a_op.shape[0])
        com = {a: 1j * _xcomm(a_op, xd[a], xd[a]) for a in axes}
        diag = np.zeros(a_op.shape[0], dtype=complex)
        for perm, sign in _signed_perms(len(axes)):
            m = lead
            for pos, idx in enumerate(perm):
                f = com[axes[idx]] if pos % 2 == 0 else com[axes[idx]].conj().T
                m = m @ f
            diag += sign * np.diagonal(m)
    else:
        com = {a: 1j * _xcomm(a_op, xd[a], xd[a]) for a in axes}
        diag = np.zeros(a_op.shape[0], dtype=complex)
        for perm, sign in _signed_perms(len(axes)):
            m = a_op
            for idx in perm:
                m = m @ com[axes[idx]]
            diag += sign * np.diagonal(m)
    depth_idx = np.repeat(volume.coords()[:, -1], fiber)
    diag = diag * _expand_mask(par_mask, fiber)
    total, tail = _layer_value(diag, depth_idx, cut, tail_tol)
    raw = norm_const(len(axes)) * total / ncols
    meta = {"sizes": volume.sizes, "axes": axes, "depth_cut": cut,
            "tail": tail, "imag": abs(raw.imag)}
    return _quantized(raw.real, meta)


def boundary_invariant_k(model: HalfSpaceModel, grid, depth: int,
                         axes: Sequence[int] = None, mu: float = 0.0,
                         depth_cut: int = None, shape: str = "bump",
                         gap: tuple = None,
                         tail_tol: float = 1e-6) -> InvariantResult:
    """Boundary cocycle of a clean slab in the mixed Bloch representation.

    One transverse fiber per parallel momentum; parallel derivations become
    -d/dk via FFT, the transverse trace is cut at depth_cut.  Much cheaper
    than the real-space route at the same accuracy (clean models only).
    """
    bulk = model.bulk
    d = bulk.d
    axes = tuple(range(d - 1)) if axes is None else tuple(axes)
    if not axes or any(a >= d - 1 for a in axes):
        raise ValueError("axes must be parallel (exclude the last axis)")
    grid = _as_grid(grid, d - 1)
    cut = depth // 2 if depth_cut is None else int(depth_cut)
    odd = len(axes) % 2 == 1
    if gap is None:
        gap = bulk_gap_k(bulk, grid + (max(max(grid), 32),), mu)
    if not odd and abs(mu) > 1e-12:
        raise NotChiralError("not-chiral: p_Delta needs mu = 0")
    jfib = np.kron(np.eye(depth), bulk.J) if not odd else None
    dim = depth * bulk.N
    a_arr = np.empty(grid + (dim, dim), dtype=complex)
    for flat in range(int(np.prod(grid))):
        idx = np.unravel_index(flat, grid)
        k = 2.0 * np.pi * np.asarray(idx, dtype=float) / np.asarray(grid)
        spec = diagonalize(halfspace_fiber(model, depth, k))
        ops = boundary_operators(spec, gap, chiral=not odd, J=jfib,
                                 shape=shape)
        a_arr[idx] = ops.u_delta if odd else ops.p_delta
    da = [-_fft_derivative(a_arr, ax) for ax in range(len(grid))]
    theta = np.repeat(np.arange(depth), bulk.N)
    nk = int(np.prod(grid))
    a_flat = a_arr.reshape(nk, dim, dim)
    da_flat = [x.reshape(nk, dim, dim) for x in da]
    layer_tot = np.zeros(cut, dtype=complex)
    eye = np.eye(dim)
    for kk in range(nk):
        diag = np.zeros(dim, dtype=complex)
        if odd:
            lead = a_flat[kk].conj().T - eye
            for perm, sign in _signed_perms(len(axes)):
                m = lead
                for pos, idx in enumerate(perm):
                    f = da_flat[idx][kk] if pos % 2 == 0 \
                        else da_flat[idx][kk].conj().T
                    m = m @ f
                diag += sign * np.diagonal(m)
        else:
            for perm, sign in _signed_perms(len(axes)):
                m = a_flat[kk]
                for idx in perm:
                    m = m @ da_flat[idx][kk]
                diag += sign * np.diagonal(m)
        for tlayer in range(cut):
            layer_tot[tlayer] += diag[theta == tlayer].sum()
    layer_tot /= nk
    total = layer_tot.sum()
    tail = abs(layer_tot[cut - 1])
    if tail > tail_tol * abs(total) and tail > 1e-12:
        raise DepthCutError(
            f"depth-cut-too-small: layer {cut - 1} still carries {tail:.2e}")
    raw = norm_const(len(axes)) * total
    meta = {"grid": grid, "depth": depth, "depth_cut": cut, "gap": gap,
            "tail": tail, "imag": abs(raw.imag)}
    return _quantized(raw.real, meta)


def boundary_current(spec: SpectralData, f_exp: SmoothStep, direction: int,
                     current, volume: FiniteVolume,
                     window: TraceWindow = TraceWindow(),
                     depth_cut: int = None,
                     bulk_gap: tuple = None) -> float:
    """Current density along the boundary at filling profile f_Exp'.

    Evaluates the per-area trace of f_Exp'(h) i[h, X_direction] with the
    hop-assembled current operator; the transverse sum is restricted to the
    near-boundary half so the far wall of the finite slab does not cancel
    the signal.
    """
    if volume.bc[-1] != "halfspace":
        raise ValueError("boundary currents need a half-space volume")
    if direction >= volume.d - 1:
        raise ValueError("current direction must be parallel")
    if bulk_gap is not None:
        lo, hi = f_exp.support
        if not (bulk_gap[0] <= lo and hi <= bulk_gap[1]):
            raise NoGapError("no-gap: f_Exp support leaves the bulk gap")
    cur = current.matrix if isinstance(current, LatticeOperator) else current
    rho = spec.apply(f_exp.derivative)
    m = rho @ cur
    fiber = m.shape[0] // volume.nsites
    cut = volume.sizes[-1] // 2 if depth_cut is None else int(depth_cut)
    par_mask = window.site_mask(volume, axes=range(volume.d - 1))
    ncols = int((par_mask & (volume.coords()[:, -1] == 0)).sum())
    mask = _expand_mask(par_mask & (volume.coords()[:, -1] < cut), fiber)
    return float(np.diagonal(m)[mask].sum().real / ncols)
