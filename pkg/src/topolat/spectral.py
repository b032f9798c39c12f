"""Eigendecomposition functional calculus: Fermi data and boundary lifts.

All spectral functions go through a full Hermitian eigendecomposition,
which is exact at the volumes handled here.  The flat band operator uses
the convention Q = sgn(H - mu) = 1 - 2 P_F, and for chiral Hamiltonians
the Fermi unitary U_F is the lower-left block of Q in the grading of the
chirality operator J (positive chirality subspace first).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import AchViolatedError, DeltaInSpectrumError, NoGapError, NotChiralError

__all__ = [
    "SpectralData",
    "FermiData",
    "SmoothStep",
    "BoundaryOperators",
    "diagonalize",
    "find_gap",
    "fermi_data",
    "chiral_fermi_data",
    "fermi_unitary_ach",
    "boundary_operators",
    "chiral_splitting",
    "grading_masks",
]


@dataclass(frozen=True, eq=False)
class SpectralData:
    """Ascending eigenvalues and the matching unitary of column eigenvectors."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def dim(self) -> int:
        return self.eigenvalues.shape[0]

    def apply(self, f: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        """Matrix function f(H) evaluated through the eigenbasis."""
        v = self.eigenvectors
        return (v * f(self.eigenvalues)) @ v.conj().T


@dataclass(frozen=True, eq=False)
class FermiData:
    """Fermi projection, flat band operator, optional Fermi unitary, gap edges."""

    projection: np.ndarray
    flatband: np.ndarray
    fermi_unitary: Optional[np.ndarray]
    gap: tuple


@dataclass(frozen=True, eq=False)
class BoundaryOperators:
    """Smooth-lift images of the gap data of a half-space Hamiltonian."""

    u_delta: np.ndarray
    p_delta: Optional[np.ndarray]


def diagonalize(op) -> SpectralData:
    """Full eigendecomposition of a Hermitian lattice operator or matrix."""
    h = np.asarray(getattr(op, "matrix", op))
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ValueError("need a square matrix")
    ev, vec = np.linalg.eigh(h)
    return SpectralData(eigenvalues=ev, eigenvectors=vec)


def find_gap(eigenvalues: np.ndarray, mu: float, gap_tol: Optional[float] = None) -> tuple:
    """Spectral gap (E-, E+) around mu; raises when states sit at the level."""
    ev = np.asarray(eigenvalues, dtype=float)
    if gap_tol is None:
        width = float(ev.max() - ev.min()) if ev.size else 0.0
        gap_tol = 1e-8 * max(width, 1.0)
    if ev.size and np.min(np.abs(ev - mu)) < gap_tol:
        raise NoGapError(f"states within {gap_tol:g} of mu={mu:g}")
    below = ev[ev < mu]
    above = ev[ev > mu]
    lo = float(below.max()) if below.size else -math.inf
    hi = float(above.min()) if above.size else math.inf
    return lo, hi


def grading_masks(J: np.ndarray) -> tuple:
    """Index arrays of the +1 and -1 chirality subspaces of a diagonal J.

    Accepts the full matrix or just its diagonal as a 1-d vector; the
    vector form avoids materializing kron(I, J) on large boxes.
    """
    J = np.asarray(J)
    diag = (J if J.ndim == 1 else np.diag(J)).real
    plus = np.where(diag > 0.5)[0]
    minus = np.where(diag < -0.5)[0]
    if plus.size + minus.size != diag.size or plus.size != minus.size:
        raise NotChiralError("chirality operator is not a balanced diagonal involution")
    return plus, minus


def _default_grading(n: int) -> np.ndarray:
    if n % 2:
        raise NotChiralError("odd dimension admits no balanced grading")
    half = n // 2
    return np.diag(np.concatenate([np.ones(half), -np.ones(half)]))


def fermi_data(
    spec: SpectralData,
    mu: float = 0.0,
    chiral: bool = False,
    gap_tol: Optional[float] = None,
    J: Optional[np.ndarray] = None,
) -> FermiData:
    """Fermi projection and flat band at level mu; Fermi unitary when chiral.

    The chiral branch requires mu = 0 and reads U_F off the lower-left
    block of Q = sgn(H); a diagonal-block residual of Q above 1e-8 raises
    NotChiralError.  J defaults to diag(1, -1) in balanced halves.
    """
    gap = find_gap(spec.eigenvalues, mu, gap_tol)
    below = spec.eigenvalues < mu
    vb = spec.eigenvectors[:, below]
    p = vb @ vb.conj().T
    q = np.eye(spec.dim) - 2.0 * p
    u = None
    if chiral:
        if abs(mu) > 1e-14:
            raise NotChiralError("chiral Fermi data requires mu = 0")
        jmat = _default_grading(spec.dim) if J is None else J
        plus, minus = grading_masks(jmat)
        offres = max(
            np.max(np.abs(q[np.ix_(plus, plus)])) if plus.size else 0.0,
            np.max(np.abs(q[np.ix_(minus, minus)])) if minus.size else 0.0,
        )
        if offres > 1e-8:
            raise NotChiralError(f"flat band has diagonal blocks of size {offres:.2e}")
        u = q[np.ix_(minus, plus)]
        uni = np.max(np.abs(u.conj().T @ u - np.eye(plus.size)))
        assert uni < 1e-10, f"Fermi unitary off from unitarity by {uni:.2e}"
    return FermiData(projection=p, flatband=q, fermi_unitary=u, gap=gap)


def chiral_fermi_data(op, J: Optional[np.ndarray] = None,
                      block_tol: float = 1e-9,
                      blocks_only: bool = False) -> FermiData:
    """FermiData of an exactly chiral H from the polar phase of its block.

    Unlike the eigenbasis route this stays defined on boxes whose edge zero
    modes put sgn(H) on a knife edge: the polar phase W V* of A = H_{-+}
    extends through exact kernels, and Q = offdiag(u*, u) anticommutes with
    J by construction.  The kernel directions are wall-localized, so
    windowed bulk traces never see the arbitrary frame chosen inside them.
    Gap edges are +-(smallest non-kernel singular value).

    With blocks_only the projection and flat band are left as None and only
    the half-dimension Fermi unitary is returned; this keeps memory at a
    quarter of the full route on large boxes.
    """
    h = np.asarray(getattr(op, "matrix", op))
    jmat = _default_grading(h.shape[0]) if J is None else J
    plus, minus = grading_masks(jmat)
    if plus.size != minus.size:
        raise NotChiralError("not-chiral: unbalanced grading blocks")
    a = h[np.ix_(minus, plus)]
    offnorm = np.linalg.norm(a) + 1e-300
    for rows in (plus, minus):
        if np.linalg.norm(h[np.ix_(rows, rows)]) > block_tol * offnorm:
            raise AchViolatedError("ach-violated: H has grading-diagonal part")
    w, s, vh = np.linalg.svd(a)
    u = w @ vh
    nker = int(np.sum(s < 1e-8 * s[0]))
    if nker >= s.size:
        raise NoGapError("no-gap: chiral block is singular")
    edge = float(s[s.size - 1 - nker])
    if blocks_only:
        return FermiData(projection=None, flatband=None, fermi_unitary=u,
                         gap=(-edge, edge))
    q = np.zeros_like(h, dtype=complex)
    q[np.ix_(minus, plus)] = u
    q[np.ix_(plus, minus)] = u.conj().T
    p = 0.5 * (np.eye(h.shape[0]) - q)
    return FermiData(projection=p, flatband=q, fermi_unitary=u,
                     gap=(-edge, edge))


def fermi_unitary_ach(op, J: Optional[np.ndarray] = None, sv_tol: float = 1e-8) -> np.ndarray:
    """Polar unitary A |A|^{-1} of the lower-left block of an approximately chiral H.

    Raises AchViolatedError when the block is numerically singular; emits a
    warning when the diagonal blocks are too large relative to A for the
    flattening homotopy to stay gapped (norm bounds >= 1).
    """
    h = np.asarray(getattr(op, "matrix", op))
    jmat = _default_grading(h.shape[0]) if J is None else J
    plus, minus = grading_masks(jmat)
    a = h[np.ix_(minus, plus)]
    b = h[np.ix_(plus, plus)]
    c = h[np.ix_(minus, minus)]
    w, s, vh = np.linalg.svd(a)
    if s.size == 0 or s.min() <= sv_tol:
        raise AchViolatedError(f"off-diagonal block has smallest singular value {s.min() if s.size else 0:.2e}")
    ainv = (vh.conj().T / s) @ w.conj().T
    if np.linalg.norm(b @ ainv, 2) >= 1.0:
        warnings.warn("chirality breaking too strong: |B A^-1| >= 1", stacklevel=2)
    if np.linalg.norm(c @ ainv.conj().T, 2) >= 1.0:
        warnings.warn("chirality breaking too strong: |C (A*)^-1| >= 1", stacklevel=2)
    return w @ vh


def _bump_g(t):
    out = np.zeros_like(t)
    pos = t > 0.0
    out[pos] = np.exp(-1.0 / t[pos])
    return out


def _bump(t):
    g = _bump_g(t)
    g1 = _bump_g(1.0 - t)
    return g / (g + g1)


def _bump_deriv(t):
    g = _bump_g(t)
    g1 = _bump_g(1.0 - t)
    out = np.zeros_like(t)
    inner = (t > 0.0) & (t < 1.0)
    ti, gi, g1i = t[inner], g[inner], g1[inner]
    out[inner] = gi * g1i * (1.0 / ti ** 2 + 1.0 / (1.0 - ti) ** 2) / (gi + g1i) ** 2
    return out


_PROFILES = {
    "quintic": lambda t: t * t * t * (10.0 + t * (-15.0 + 6.0 * t)),
    "cosine": lambda t: 0.5 * (1.0 - np.cos(np.pi * t)),
    # C-infinity profile; keeps functions of Bloch fibers spectrally smooth
    # in k, so FFT derivatives of boundary operators converge fast
    "bump": _bump,
}

_PROFILE_DERIVS = {
    "quintic": lambda t: 30.0 * t * t * (1.0 - t) ** 2,
    "cosine": lambda t: 0.5 * np.pi * np.sin(np.pi * t),
    "bump": _bump_deriv,
}


@dataclass(frozen=True)
class SmoothStep:
    """Monotone step across a gap: 0/1 outside for kind 'exp', -1/+1 for kind 'ind'.

    The profile is a polynomial (or cosine) smoothstep, symmetric about the
    gap center, so the 'ind' variant is odd there.  Values outside the
    support are exact, which keeps exp(2 pi i f(E)) at identity on bulk states.
    """

    kind: str
    support: tuple
    shape: str = "quintic"

    def __post_init__(self):
        if self.kind not in ("exp", "ind"):
            raise ValueError("kind must be 'exp' or 'ind'")
        if self.shape not in _PROFILES:
            raise ValueError(f"unknown profile {self.shape!r}")
        lo, hi = self.support
        if not lo < hi:
            raise ValueError("empty support interval")

    def __call__(self, energy):
        lo, hi = self.support
        e = np.asarray(energy, dtype=float)
        t = np.clip((e - lo) / (hi - lo), 0.0, 1.0)
        val = _PROFILES[self.shape](t)
        if self.kind == "ind":
            val = 2.0 * val - 1.0
        return val

    def derivative(self, energy):
        """df/dE; vanishes outside the support, integrates to 1 ('exp')."""
        lo, hi = self.support
        e = np.asarray(energy, dtype=float)
        t = np.clip((e - lo) / (hi - lo), 0.0, 1.0)
        val = _PROFILE_DERIVS[self.shape](t) / (hi - lo)
        if self.kind == "ind":
            val = 2.0 * val
        return val


def boundary_operators(
    spec: SpectralData,
    gap: tuple,
    chiral: bool = False,
    J: Optional[np.ndarray] = None,
    shape: str = "quintic",
) -> BoundaryOperators:
    """Gap-supported unitary exp(2 pi i f_Exp(h)) and chiral boundary projection.

    The projection is exp(-i pi f_Ind(h)/2) P_+ exp(+i pi f_Ind(h)/2) with
    P_+ the positive chirality eigenprojection; it equals P_- exactly when
    no spectrum lies in the gap.
    """
    f_exp = SmoothStep("exp", gap, shape)
    u = spec.apply(lambda e: np.exp(2.0j * np.pi * f_exp(e)))
    p = None
    if chiral:
        jmat = _default_grading(spec.dim) if J is None else np.asarray(J)
        f_ind = SmoothStep("ind", gap, shape)
        rot = spec.apply(lambda e: np.exp(-0.5j * np.pi * f_ind(e)))
        pplus = 0.5 * (np.eye(spec.dim) + jmat)
        p = rot @ pplus @ rot.conj().T
        idem = np.max(np.abs(p @ p - p))
        assert idem < 1e-10, f"boundary projection idempotency residual {idem:.2e}"
    return BoundaryOperators(u_delta=u, p_delta=p)


def chiral_splitting(
    spec: SpectralData,
    delta: float,
    J: Optional[np.ndarray] = None,
    gap_tol: Optional[float] = None,
) -> tuple:
    """Split the spectral window [-delta, delta] into chirality eigenprojections.

    Requires +-delta to fall in gaps of the spectrum; the window subspace is
    J-invariant for a chiral Hamiltonian, and the returned projections are
    its intersections with the +-1 eigenspaces of J.
    """
    ev = spec.eigenvalues
    if gap_tol is None:
        width = float(ev.max() - ev.min()) if ev.size else 0.0
        gap_tol = 1e-8 * max(width, 1.0)
    if np.min(np.abs(ev - delta)) < gap_tol or np.min(np.abs(ev + delta)) < gap_tol:
        raise DeltaInSpectrumError(f"spectrum within {gap_tol:g} of +-{delta:g}")
    jmat = _default_grading(spec.dim) if J is None else np.asarray(J)
    inside = np.abs(ev) < delta
    n = spec.dim
    if not inside.any():
        zero = np.zeros((n, n), dtype=complex)
        return zero, zero.copy()
    vw = spec.eigenvectors[:, inside]
    a = vw.conj().T @ jmat @ vw
    invres = np.max(np.abs(a @ a - np.eye(a.shape[0])))
    if invres > 1e-8:
        raise NotChiralError(f"window subspace not J-invariant, residual {invres:.2e}")
    aval, avec = np.linalg.eigh(a)
    cplus = vw @ avec[:, aval > 0.0]
    cminus = vw @ avec[:, aval < 0.0]
    return cplus @ cplus.conj().T, cminus @ cminus.conj().T
