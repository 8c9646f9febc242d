"""Model Hamiltonians for periodic spin-1/2 chains in the sigma^z basis.

Three models are supported:

  tfim   H = -J sum_i sz_i sz_{i+1} - h sum_i sx_i          (Pauli operators)
  ahm    H = sum_i [(1+g) Sz Sz + (1-g)(Sx Sx + Sy Sy)]     (spin-1/2, g = gamma)
  j1j2   H = J1 sum_i S_i.S_{i+1} + J2 sum_i S_i.S_{i+2}    (spin-1/2)

All are real in this basis, so the action of H on a basis state is a short
list of (target, amplitude) pairs: one diagonal entry plus at most 2L
single-flip / flip-flop entries.  The sign rotation R|s> = (-1)^{N_A}|s>
(sublattice A = even sites) is applied at the matrix-element level when
`msr` is set, flipping the sign of any move that changes the sublattice-A
up count by an odd amount.  Pinning fields enter either on the diagonal
(staggered_z, uniform_z) or as extra single-flip entries (uniform_x, kept
in the computational frame so off-diagonals stay non-positive).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .spins import SectorBasis, SpinConfiguration, bits_to_sigma

KINDS = ("tfim", "ahm", "j1j2")
BIAS_AXES = ("none", "staggered_z", "uniform_x", "uniform_z")

DENSE_MAX_DIM = 20_000


@dataclass(frozen=True)
class BiasField:
    """Symmetry-breaking pinning field added to the bare Hamiltonian."""

    axis: str = "none"
    strength: float = 0.0

    def __post_init__(self):
        if self.axis not in BIAS_AXES:
            raise ValueError(f"unknown bias axis {self.axis!r}")
        if self.strength < 0:
            raise ValueError("bias strength must be >= 0")
        if self.axis == "none" and self.strength != 0:
            raise ValueError("bias strength must be 0 when axis is 'none'")


@dataclass(frozen=True)
class HamiltonianModel:
    kind: str
    L: int
    J: float = 0.0
    h_field: float = 0.0
    gamma: float = 0.0
    J1: float = 0.0
    J2: float = 0.0
    msr: bool = False
    bias: BiasField = field(default_factory=BiasField)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown Hamiltonian kind {self.kind!r}")
        if self.L < 2:
            raise ValueError("chain length must be >= 2")
        if self.L == 2:
            warnings.warn("L=2 chain: periodic bonds coincide", stacklevel=3)
        if self.kind == "ahm" and not -1.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [-1, 1]")
        if self.kind == "j1j2" and (self.J1 <= 0 or self.J2 < 0):
            raise ValueError("j1j2 requires J1 > 0 and J2 >= 0")
        if self.bias.axis != "none" and self.kind != "ahm":
            raise ValueError("pinning fields are defined for the ahm only")


def tfim(L: int, J: float = 1.0, h: float = 1.0, msr: bool = False) -> HamiltonianModel:
    return HamiltonianModel(kind="tfim", L=L, J=J, h_field=h, msr=msr)


def ahm(L: int, gamma: float, msr: bool = False, bias: BiasField | None = None) -> HamiltonianModel:
    return HamiltonianModel(kind="ahm", L=L, gamma=gamma, msr=msr, bias=bias or BiasField())


def j1j2(L: int, J1: float = 1.0, J2: float = 0.0, msr: bool = False) -> HamiltonianModel:
    return HamiltonianModel(kind="j1j2", L=L, J1=J1, J2=J2, msr=msr)


def msr_sign(c: SpinConfiguration) -> int:
    """Sign (-1)^{N_A} of a configuration, N_A = up spins on even sites."""
    return -1 if c.sublattice_a_up_count() % 2 else 1


def with_bias(m: HamiltonianModel, h: float) -> HamiltonianModel:
    """Copy of an ahm with pinning strength h.

    The axis follows the annealing policy: staggered_z in the planar regime
    (gamma < 0.9) and uniform_x in the Ising limit (gamma >= 0.9).
    """
    if m.kind != "ahm":
        raise ValueError("with_bias applies to the ahm only")
    if h < 0:
        raise ValueError("bias strength must be >= 0")
    if h == 0:
        return replace(m, bias=BiasField())
    axis = "staggered_z" if m.gamma < 0.9 else "uniform_x"
    return replace(m, bias=BiasField(axis=axis, strength=h))


# --------------------------------------------------------------------------
# Move table
# --------------------------------------------------------------------------
#
# A move is (move_kind, sites, amplitude, rotated):
#   "flip"      flip one site unconditionally
#   "flipflop"  swap an antiparallel pair (fires only when spins differ)
# `rotated` moves acquire the MSR sign (-1)^{#even sites touched}; the
# uniform_x pinning field is deliberately left unrotated (see module doc).


def _msr_move_sign(m: HamiltonianModel, sites: tuple[int, ...]) -> float:
    if not m.msr:
        return 1.0
    return -1.0 if sum(1 for s in sites if s % 2 == 0) % 2 else 1.0


def _move_specs(m: HamiltonianModel) -> list[tuple[str, tuple[int, ...], float]]:
    """Off-diagonal moves in deterministic site order, zero terms omitted."""
    L = m.L
    moves: list[tuple[str, tuple[int, ...], float]] = []
    if m.kind == "tfim":
        if m.h_field != 0.0:
            for i in range(L):
                moves.append(("flip", (i,), -m.h_field * _msr_move_sign(m, (i,))))
    elif m.kind == "ahm":
        amp = (1.0 - m.gamma) / 2.0
        if amp != 0.0:
            for i in range(L):
                sites = (i, (i + 1) % L)
                moves.append(("flipflop", sites, amp * _msr_move_sign(m, sites)))
        if m.bias.axis == "uniform_x" and m.bias.strength != 0.0:
            for i in range(L):
                moves.append(("flip", (i,), -m.bias.strength / 2.0))
    elif m.kind == "j1j2":
        for i in range(L):
            sites = (i, (i + 1) % L)
            moves.append(("flipflop", sites, (m.J1 / 2.0) * _msr_move_sign(m, sites)))
        if m.J2 != 0.0:
            for i in range(L):
                j = (i + 2) % L
                if j == i:
                    continue
                moves.append(("flipflop", (i, j), (m.J2 / 2.0) * _msr_move_sign(m, (i, j))))
    return moves


def diagonal_energy(m: HamiltonianModel, bits: np.ndarray) -> np.ndarray:
    """Diagonal matrix element <s|H|s> for each row of a (B, L) bit array."""
    bits = np.atleast_2d(bits)
    if bits.shape[-1] != m.L:
        raise ValueError(f"configuration length {bits.shape[-1]} != L={m.L}")
    sigma = bits_to_sigma(bits)
    nn = (sigma * np.roll(sigma, -1, axis=-1)).sum(axis=-1)
    if m.kind == "tfim":
        diag = -m.J * nn
    elif m.kind == "ahm":
        diag = (1.0 + m.gamma) / 4.0 * nn
    else:
        nnn = (sigma * np.roll(sigma, -2, axis=-1)).sum(axis=-1)
        diag = m.J1 / 4.0 * nn + m.J2 / 4.0 * nnn
    if m.bias.axis == "staggered_z" and m.bias.strength != 0.0:
        parity = np.where(np.arange(m.L) % 2 == 0, 1.0, -1.0)
        diag = diag - m.bias.strength / 2.0 * (sigma * parity).sum(axis=-1)
    elif m.bias.axis == "uniform_z" and m.bias.strength != 0.0:
        diag = diag - m.bias.strength / 2.0 * sigma.sum(axis=-1)
    return diag


def connections(m: HamiltonianModel, c: SpinConfiguration) -> "ConnectionSet":
    """Sparse row {(s', <s'|H|s>)} generated from one configuration.

    The diagonal entry comes first; off-diagonal entries follow in the
    deterministic move order of `_move_specs`.
    """
    if c.L != m.L:
        raise ValueError(f"configuration length {c.L} != L={m.L}")
    entries: list[tuple[SpinConfiguration, float]] = []
    entries.append((c, float(diagonal_energy(m, c.bits[None, :])[0])))
    for move_kind, sites, amp in _move_specs(m):
        if move_kind == "flip":
            entries.append((c.flip(sites[0]), amp))
        else:
            i, j = sites
            if c.spin_at(i) != c.spin_at(j):
                entries.append((c.exchange(i, j), amp))
    return ConnectionSet(source=c, entries=entries)


@dataclass(frozen=True)
class ConnectionSet:
    source: SpinConfiguration
    entries: list[tuple[SpinConfiguration, float]]

    @property
    def diagonal(self) -> float:
        return self.entries[0][1]

    @property
    def off_diagonal(self) -> list[tuple[SpinConfiguration, float]]:
        return self.entries[1:]


def connection_candidates(
    m: HamiltonianModel, bits: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batched off-diagonal targets for every row of a (B, L) bit array.

    Returns (cand_bits, rows, amps): candidate configurations, the sample
    row each one belongs to, and its matrix element.  Candidates are emitted
    move-by-move, rows ascending within each move, so the layout is
    deterministic.
    """
    bits = np.atleast_2d(bits)
    if bits.shape[-1] != m.L:
        raise ValueError(f"configuration length {bits.shape[-1]} != L={m.L}")
    B = bits.shape[0]
    all_rows = np.arange(B, dtype=np.int64)
    blocks, row_blocks, amp_blocks = [], [], []
    for move_kind, sites, amp in _move_specs(m):
        if move_kind == "flip":
            cand = bits.copy()
            cand[:, sites[0]] ^= 1
            blocks.append(cand)
            row_blocks.append(all_rows)
            amp_blocks.append(np.full(B, amp))
        else:
            i, j = sites
            mask = bits[:, i] != bits[:, j]
            if not mask.any():
                continue
            cand = bits[mask].copy()
            cand[:, i] ^= 1
            cand[:, j] ^= 1
            blocks.append(cand)
            row_blocks.append(all_rows[mask])
            amp_blocks.append(np.full(int(mask.sum()), amp))
    if not blocks:
        return (
            np.empty((0, m.L), dtype=bits.dtype),
            np.empty(0, dtype=np.int64),
            np.empty(0, dtype=np.float64),
        )
    return np.concatenate(blocks), np.concatenate(row_blocks), np.concatenate(amp_blocks)


def _sector_closed(m: HamiltonianModel, basis: SectorBasis) -> bool:
    if not basis.constrained:
        return True
    if m.kind == "tfim" and m.h_field != 0.0:
        return False
    if m.bias.axis == "uniform_x" and m.bias.strength != 0.0:
        return False
    return True


def build_sector_matrix(m: HamiltonianModel, basis: SectorBasis, format: str = "auto"):
    """Assemble <s'|H|s> over a basis: H[row s', col s] = amplitude.

    Dense ndarray for dim <= 20,000, CSR beyond (format="dense"/"sparse"
    overrides).  Raises if any connection leaves the basis (sector not
    closed under H).
    """
    if m.L != basis.L:
        raise ValueError("basis length does not match the Hamiltonian")
    if not _sector_closed(m, basis):
        raise ValueError(f"{m.kind} with this bias is not closed on the constrained sector")
    dim = basis.size
    if format == "auto":
        format = "dense" if dim <= DENSE_MAX_DIM else "sparse"
    if format not in ("dense", "sparse"):
        raise ValueError(f"unknown matrix format {format!r}")

    codes = basis.codes
    bits = basis.bits()
    diag = diagonal_energy(m, bits)
    src_all = np.arange(dim, dtype=np.int64)

    rows, cols, vals = [src_all], [src_all], [diag]
    for move_kind, sites, amp in _move_specs(m):
        if move_kind == "flip":
            mask_bits = np.uint64(1 << sites[0])
            src = src_all
            targets = codes ^ mask_bits
        else:
            i, j = sites
            fire = bits[:, i] != bits[:, j]
            if not fire.any():
                continue
            mask_bits = np.uint64((1 << i) | (1 << j))
            src = src_all[fire]
            targets = codes[fire] ^ mask_bits
        if not np.all(basis.contains(targets)):
            raise ValueError("sector not closed: a connection leaves the basis")
        tgt = np.searchsorted(codes, targets)
        rows.append(tgt)
        cols.append(src)
        vals.append(np.full(len(src), amp))

    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    if format == "sparse":
        return sp.coo_matrix((vals, (rows, cols)), shape=(dim, dim)).tocsr()
    h = np.zeros((dim, dim))
    np.add.at(h, (rows, cols), vals)
    return h
