"""Spin configurations and sector bases for a periodic spin-1/2 chain.

A configuration of L sites is stored as an integer bit code (site i = bit i,
bit 1 = up).  The sigma view maps bit b to sigma = 2b - 1 in {-1, +1}.  All
values are immutable, so they can be shared freely between workers.

Hot paths (sampler, estimators) operate on uint8 bit matrices of shape
(batch, L); the module-level helpers below convert between the two views.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MAX_SITES = 24


def bits_to_codes(bits: np.ndarray) -> np.ndarray:
    """Pack a (..., L) 0/1 array into integer codes (site i = bit i)."""
    bits = np.asarray(bits)
    L = bits.shape[-1]
    weights = (np.uint64(1) << np.arange(L, dtype=np.uint64))
    return (bits.astype(np.uint64) * weights).sum(axis=-1)


def codes_to_bits(codes: np.ndarray, L: int) -> np.ndarray:
    """Unpack integer codes into a (..., L) uint8 bit array."""
    codes = np.asarray(codes, dtype=np.uint64)
    shifts = np.arange(L, dtype=np.uint64)
    return ((codes[..., None] >> shifts) & np.uint64(1)).astype(np.uint8)


def bits_to_sigma(bits: np.ndarray) -> np.ndarray:
    """Map 0/1 bits to float sigma values in {-1.0, +1.0}."""
    return 2.0 * np.asarray(bits, dtype=np.float64) - 1.0


def magnetization_bits(bits: np.ndarray) -> np.ndarray:
    """Total magnetization sum_i sigma_i for each row of a bit array."""
    bits = np.asarray(bits)
    L = bits.shape[-1]
    return 2 * bits.sum(axis=-1, dtype=np.int64) - L


def _popcount_u32(x: np.ndarray) -> np.ndarray:
    # SWAR popcount; valid for values below 2**32.
    x = x.astype(np.uint32)
    x = x - ((x >> 1) & np.uint32(0x55555555))
    x = (x & np.uint32(0x33333333)) + ((x >> 2) & np.uint32(0x33333333))
    x = (x + (x >> 4)) & np.uint32(0x0F0F0F0F)
    return ((x * np.uint32(0x01010101)) >> 24).astype(np.int64)


@dataclass(frozen=True)
class SpinConfiguration:
    """One basis state of an L-site chain, stored as an integer bit code."""

    code: int
    L: int

    def __post_init__(self):
        if self.L < 2:
            raise ValueError(f"chain length must be >= 2, got {self.L}")
        if not 0 <= self.code < (1 << self.L):
            raise ValueError(f"code {self.code} out of range for L={self.L}")

    @classmethod
    def from_bits(cls, bits) -> "SpinConfiguration":
        bits = np.asarray(bits)
        return cls(int(bits_to_codes(bits)), len(bits))

    @classmethod
    def from_string(cls, s: str) -> "SpinConfiguration":
        """Build from a string of 'u'/'d' characters, site 0 first."""
        bits = [1 if ch == "u" else 0 for ch in s]
        if any(ch not in "ud" for ch in s):
            raise ValueError(f"expected a string of 'u'/'d', got {s!r}")
        return cls.from_bits(bits)

    @property
    def bits(self) -> np.ndarray:
        return codes_to_bits(np.uint64(self.code), self.L)

    @property
    def sigma(self) -> np.ndarray:
        return bits_to_sigma(self.bits)

    def spin_at(self, site: int) -> int:
        self._check_site(site)
        return 2 * ((self.code >> site) & 1) - 1

    def flip(self, site: int) -> "SpinConfiguration":
        """Return the configuration with the spin at `site` flipped."""
        self._check_site(site)
        return SpinConfiguration(self.code ^ (1 << site), self.L)

    def exchange(self, i: int, j: int) -> "SpinConfiguration":
        """Swap the opposite spins at sites i and j (magnetization-preserving)."""
        self._check_site(i)
        self._check_site(j)
        if self.spin_at(i) == self.spin_at(j):
            raise ValueError(f"exchange requires opposite spins at sites {i}, {j}")
        return SpinConfiguration(self.code ^ ((1 << i) | (1 << j)), self.L)

    def reflect(self) -> "SpinConfiguration":
        """Mirror the chain: site i maps to site L-1-i."""
        return SpinConfiguration.from_bits(self.bits[::-1])

    def magnetization(self) -> int:
        return int(magnetization_bits(self.bits))

    def sublattice_a_up_count(self) -> int:
        """Number of up spins on the even-site sublattice A."""
        return int(self.bits[0::2].sum())

    def _check_site(self, site: int) -> None:
        if not 0 <= site < self.L:
            raise ValueError(f"site {site} out of range for L={self.L}")

    def __str__(self) -> str:
        return "".join("u" if b else "d" for b in self.bits)


@dataclass(frozen=True)
class SectorBasis:
    """Deterministically ordered basis of an L-site space.

    `n_up` fixes the number of up spins (L/2 for the zero-magnetization
    sector) or is None for the full 2^L space.  Codes are strictly
    increasing, so state index doubles as an integer rank.
    """

    L: int
    n_up: int | None
    codes: np.ndarray = field(repr=False)

    @property
    def constrained(self) -> bool:
        return self.n_up is not None

    @property
    def size(self) -> int:
        return len(self.codes)

    def __len__(self) -> int:
        return len(self.codes)

    def state(self, index: int) -> SpinConfiguration:
        return SpinConfiguration(int(self.codes[index]), self.L)

    def bits(self) -> np.ndarray:
        """Materialize the basis as a (size, L) uint8 bit matrix."""
        return codes_to_bits(self.codes, self.L)

    def index_of(self, codes) -> np.ndarray:
        """Rank(s) of the given code(s); raises if any is not in the basis."""
        codes = np.asarray(codes, dtype=np.uint64)
        idx = np.searchsorted(self.codes, codes)
        idx = np.minimum(idx, self.size - 1)
        if not np.all(self.codes[idx] == codes):
            raise KeyError("configuration not in basis")
        return idx

    def contains(self, codes) -> np.ndarray:
        codes = np.asarray(codes, dtype=np.uint64)
        idx = np.searchsorted(self.codes, codes)
        idx = np.minimum(idx, self.size - 1)
        return self.codes[idx] == codes


def enumerate_sector(L: int, constrained: bool) -> SectorBasis:
    """Enumerate the full space or the zero-magnetization sector of L sites.

    States are ordered by increasing integer code.  Guarded at L <= 24 to
    keep the enumeration within desk-scale memory.
    """
    if L < 2:
        raise ValueError(f"chain length must be >= 2, got {L}")
    if L > MAX_SITES:
        raise ValueError(f"L={L} exceeds the enumeration guard of {MAX_SITES} sites")
    if constrained and L % 2 != 0:
        raise ValueError("zero-magnetization sector requires even L")
    all_codes = np.arange(1 << L, dtype=np.uint64)
    if not constrained:
        return SectorBasis(L=L, n_up=None, codes=all_codes)
    mask = _popcount_u32(all_codes) == L // 2
    return SectorBasis(L=L, n_up=L // 2, codes=all_codes[mask])
