"""Irreducible complex Clifford representations and Dirac/Weyl sign operators.

Generators nu_1..nu_n are Hermitian, unitary, and pairwise anticommuting
(nu_i nu_j + nu_j nu_i = 2 delta_ij). A fixed inductive construction pins all
phases so chirality signs are reproducible across runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ComputationError

__all__ = ["CliffordRep", "DiracPhase", "build_rep", "dirac_phase", "DiracKernelError"]


class DiracKernelError(ComputationError):
    """Raised when the shifted Dirac operator has a (near-)zero eigenvalue."""

    token = "dirac-kernel"


@dataclass(frozen=True, eq=False)
class CliffordRep:
    """n Hermitian anticommuting generators on C^(2^floor(n/2)).

    chirality is the grading nu_0 = (-i)^(n/2) nu_1...nu_n for even n and the
    identity for odd n (where nu_1...nu_n = i^floor(n/2) * 1).
    """

    n: int
    dim: int
    generators: tuple[np.ndarray, ...]
    chirality: np.ndarray = field(repr=False)


def build_rep(n: int) -> CliffordRep:
    """Inductive irreducible representation with n generators.

    Base: sigma_1 = [1]. Odd step adds the previous even grading as the new
    generator; even step doubles the dimension with off-diagonal blocks.
    """
    if n < 1:
        raise ValueError("generator count must be >= 1")
    gens = [np.array([[1.0 + 0.0j]])]
    grading = None
    m = 1
    while m < n:
        if m % 2 == 1:
            # even step: m+1 = 2k+2 generators on doubled space
            dim = gens[0].shape[0]
            zero = np.zeros((dim, dim), dtype=complex)
            eye = np.eye(dim, dtype=complex)
            new = [np.block([[zero, g], [g, zero]]) for g in gens]
            new.append(np.block([[zero, -1j * eye], [1j * eye, zero]]))
            gens = new
            grading = np.block([[eye, zero], [zero, -eye]])
        else:
            # odd step: previous grading becomes the extra generator
            gens = gens + [grading]
            grading = None
        m += 1
    dim = gens[0].shape[0]
    if n % 2 == 0:
        chirality = grading
    else:
        chirality = np.eye(dim, dtype=complex)
    rep = CliffordRep(n=n, dim=dim, generators=tuple(g.copy() for g in gens), chirality=chirality)
    _validate(rep)
    return rep


def _validate(rep: CliffordRep) -> None:
    eye = np.eye(rep.dim)
    for i, gi in enumerate(rep.generators):
        assert np.max(np.abs(gi - gi.conj().T)) < 1e-12
        for j, gj in enumerate(rep.generators):
            acomm = gi @ gj + gj @ gi
            target = 2.0 * eye if i == j else 0.0 * eye
            assert np.max(np.abs(acomm - target)) < 1e-12
    prod = eye.astype(complex)
    for g in rep.generators:
        prod = prod @ g
    if rep.n % 2 == 0:
        assert np.max(np.abs((-1j) ** (rep.n // 2) * prod - rep.chirality)) < 1e-12
        for g in rep.generators:
            assert np.max(np.abs(rep.chirality @ g + g @ rep.chirality)) < 1e-12
    else:
        assert np.max(np.abs(prod - (1j) ** (rep.n // 2) * eye)) < 1e-12


@dataclass(frozen=True, eq=False)
class DiracPhase:
    """Site-diagonal sign F = sgn(sum_i nu_i (X_i + x0_i)) and derived blocks.

    F_blocks[s] is the Q x Q sign matrix at site s (Q = rep.dim). For even n
    the grading is diag(1,-1) per site and G_blocks[s] is the lower-left
    (Q/2 x Q/2) unitary block of F; for odd n E_blocks[s] = (1 + F)/2.
    positions[s] are integer site coordinates relative to the volume center.
    """

    rep: CliffordRep
    positions: np.ndarray
    F_blocks: np.ndarray
    grading: np.ndarray | None
    G_blocks: np.ndarray | None
    E_blocks: np.ndarray | None

    def dense_F(self) -> np.ndarray:
        """F as a dense matrix on sites x spinor (site-major indexing)."""
        return _blockdiag(self.F_blocks)

    def dense_G(self) -> np.ndarray:
        if self.G_blocks is None:
            raise ValueError("G only defined for even generator count")
        return _blockdiag(self.G_blocks)

    def dense_E(self) -> np.ndarray:
        if self.E_blocks is None:
            raise ValueError("E only defined for odd generator count")
        return _blockdiag(self.E_blocks)


def _blockdiag(blocks: np.ndarray) -> np.ndarray:
    s, q, _ = blocks.shape
    out = np.zeros((s * q, s * q), dtype=complex)
    for i in range(s):
        out[i * q:(i + 1) * q, i * q:(i + 1) * q] = blocks[i]
    return out


def _sign_hermitian(m: np.ndarray, tol: float) -> np.ndarray:
    w, v = np.linalg.eigh(m)
    if np.min(np.abs(w)) < tol:
        raise DiracKernelError("dirac-kernel: shifted Dirac operator is singular")
    return (v * np.sign(w)) @ v.conj().T


def dirac_phase(rep: CliffordRep, volume, x0) -> DiracPhase:
    """Sign of the position-shifted Dirac operator on a finite volume.

    x0 must lie in (0,1)^d so that X + x0 never vanishes; positions are taken
    relative to the volume center floor(L/2) per axis.
    """
    x0 = np.asarray(x0, dtype=float)
    if rep.n != volume.d:
        raise ValueError("generator count must match volume dimension")
    if x0.shape != (volume.d,) or np.any(x0 <= 0.0) or np.any(x0 >= 1.0):
        raise ValueError("x0 must lie in the open cube (0,1)^d")
    pos = volume.centered_positions()
    q = rep.dim
    nsites = pos.shape[0]
    shifted = pos + x0[None, :]
    f_blocks = np.empty((nsites, q, q), dtype=complex)
    for s in range(nsites):
        d_site = np.zeros((q, q), dtype=complex)
        for i, g in enumerate(rep.generators):
            d_site += shifted[s, i] * g
        f_blocks[s] = _sign_hermitian(d_site, 1e-12)
    if rep.n % 2 == 0:
        h = q // 2
        grading = rep.chirality
        g_blocks = f_blocks[:, h:, :h].copy()
        e_blocks = None
    else:
        grading = None
        g_blocks = None
        e_blocks = (np.broadcast_to(np.eye(q, dtype=complex), f_blocks.shape) + f_blocks) / 2.0
        e_blocks = np.ascontiguousarray(e_blocks)
    return DiracPhase(rep=rep, positions=pos, F_blocks=f_blocks, grading=grading,
                      G_blocks=g_blocks, E_blocks=e_blocks)
