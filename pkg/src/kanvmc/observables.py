"""Ground-state observables, computed two ways from one code path:

  exact mode       from a normalized amplitude vector over an enumerated basis
  stochastic mode  from Monte Carlo samples of a model, using the same
                   ratio trick as the local energy for off-diagonal pieces

Observables: spin-spin correlators C^{aa}(r) for a = x, y, z, their isotropic
average, the connected dimer-dimer correlator D(r), the structure factor
S(k) on the momentum grid k = 2 pi m / L, and the long-distance Pauli
correlator m^2 = (1/L) sum_i <sz_i sz_{i+L/2}>.

States carrying the sign rotation (msr_frame=True) report x/y correlators in
the physical frame: a both-site flip at odd distance straddles the
sublattices and picks up one rotation sign.  Diagonal observables are
unaffected by the rotation.

Stochastic error bars are plain standard errors of the per-sample
estimators (no autocorrelation correction; sampling is sweep-separated).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .spins import SectorBasis, bits_to_sigma


@dataclass(frozen=True)
class ExactState:
    """Normalized amplitude vector over an enumerated basis."""

    basis: SectorBasis
    vector: np.ndarray
    msr_frame: bool = False

    def __post_init__(self):
        if self.vector.shape != (self.basis.size,):
            raise ValueError("vector dimension does not match the basis")

    @property
    def L(self) -> int:
        return self.basis.L


@dataclass(frozen=True)
class SampledState:
    """Monte Carlo samples of a log-amplitude model."""

    model: object
    samples: np.ndarray
    msr_frame: bool = False
    sector_constrained: bool = False

    def __post_init__(self):
        if self.samples.ndim != 2 or self.samples.shape[1] != self.model.L:
            raise ValueError("samples must be (n, L) with the model's L")
        if self.samples.shape[0] == 0:
            raise ValueError("need at least one sample")

    @property
    def L(self) -> int:
        return self.model.L


@dataclass(frozen=True)
class ObservableSeries:
    kind: str
    abscissa: np.ndarray
    values: np.ndarray
    errors: np.ndarray
    mode: str

    def __post_init__(self):
        if not len(self.abscissa) == len(self.values) == len(self.errors):
            raise ValueError("series columns must have equal length")


def _mean_stderr(per_sample: np.ndarray) -> tuple[float, float]:
    n = per_sample.shape[0]
    mean = float(per_sample.mean())
    var = float(np.mean((per_sample - mean) ** 2))
    return mean, math.sqrt(max(var, 0.0) / n)


def _check_r(L: int, r: int) -> None:
    if not 0 <= r < L:
        raise ValueError(f"distance r={r} outside [0, {L})")


# --------------------------------------------------------------------------
# diagonal per-configuration values
# --------------------------------------------------------------------------


def _czz_rows(bits: np.ndarray, r: int) -> np.ndarray:
    sigma = bits_to_sigma(bits)
    return (sigma * np.roll(sigma, -r, axis=-1)).mean(axis=-1) / 4.0


def _dimer_rows(bits: np.ndarray, r: int) -> np.ndarray:
    sigma = bits_to_sigma(bits)
    bond = sigma * np.roll(sigma, -1, axis=-1)
    return (bond * np.roll(bond, -r, axis=-1)).mean(axis=-1) / 16.0


def _m2_rows(bits: np.ndarray) -> np.ndarray:
    sigma = bits_to_sigma(bits)
    half = bits.shape[-1] // 2
    return (sigma * np.roll(sigma, -half, axis=-1)).mean(axis=-1)


def _sk_rows(bits: np.ndarray, k: float) -> np.ndarray:
    sigma = bits_to_sigma(bits)
    L = bits.shape[-1]
    phases = np.exp(1j * k * np.arange(L))
    mk = (sigma * phases).sum(axis=-1) / 2.0
    return (mk.real**2 + mk.imag**2) / L


def _diagonal_value(state, rows_fn) -> tuple[float, float]:
    if isinstance(state, ExactState):
        p = state.vector**2
        p = p / p.sum()
        vals = rows_fn(state.basis.bits())
        return float(np.dot(p, vals)), 0.0
    return _mean_stderr(rows_fn(state.samples))


# --------------------------------------------------------------------------
# spin-spin correlators
# --------------------------------------------------------------------------


def _xy_pair_amp(axis: str, antiparallel: np.ndarray) -> np.ndarray:
    # <s'|Sa_i Sa_j|s> for the both-site flip: x gives +1/4 always,
    # y gives +1/4 on antiparallel pairs and -1/4 on parallel ones
    if axis == "x":
        return np.full(antiparallel.shape, 0.25)
    return np.where(antiparallel, 0.25, -0.25)


def _xy_frame_sign(state, r: int) -> float:
    # one endpoint on each sublattice at odd r (even L), so the rotation
    # contributes a single sign
    return -1.0 if (state.msr_frame and r % 2 == 1) else 1.0


def _spin_spin_xy_exact(state: ExactState, axis: str, r: int) -> float:
    basis, v = state.basis, state.vector
    L = state.L
    bits = basis.bits()
    codes = basis.codes
    norm = float(v @ v)
    total = 0.0
    sign = _xy_frame_sign(state, r)
    for ell in range(L):
        j = (ell + r) % L
        mask_bits = np.uint64((1 << ell) | (1 << j))
        anti = bits[:, ell] != bits[:, j]
        amp = _xy_pair_amp(axis, anti)
        targets = codes ^ mask_bits
        if basis.constrained:
            keep = anti
        else:
            keep = np.ones(basis.size, dtype=bool)
        idx = np.searchsorted(codes, targets[keep])
        total += float(np.dot(v[keep] * amp[keep], v[idx]))
    return sign * total / (L * norm)


def _spin_spin_xy_rows(state: SampledState, axis: str, r: int) -> np.ndarray:
    model, bits = state.model, state.samples
    B, L = bits.shape
    sign = _xy_frame_sign(state, r)
    src_log = model.log_psi_batch(bits)
    cand_blocks, row_blocks, amp_blocks = [], [], []
    all_rows = np.arange(B, dtype=np.int64)
    for ell in range(L):
        j = (ell + r) % L
        anti = bits[:, ell] != bits[:, j]
        keep = anti if state.sector_constrained else np.ones(B, dtype=bool)
        if not keep.any():
            continue
        cand = bits[keep].copy()
        cand[:, ell] ^= 1
        cand[:, j] ^= 1
        cand_blocks.append(cand)
        row_blocks.append(all_rows[keep])
        amp_blocks.append(_xy_pair_amp(axis, anti[keep]))
    if not cand_blocks:
        return np.zeros(B)
    cand = np.concatenate(cand_blocks)
    rows = np.concatenate(row_blocks)
    amps = np.concatenate(amp_blocks)
    ratios = np.exp(model.log_psi_batch(cand) - src_log[rows])
    per_sample = np.bincount(rows, weights=amps * ratios, minlength=B)
    return sign * per_sample / L


def spin_spin(state, axis: str, r: int) -> tuple[float, float]:
    """C^{aa}(r) = (1/L) sum_l <Sa_l Sa_{l+r}>; returns (value, stderr)."""
    if axis not in ("x", "y", "z"):
        raise ValueError(f"axis must be x, y or z, got {axis!r}")
    _check_r(state.L, r)
    if r == 0:
        return 0.25, 0.0  # Sa Sa = 1/4 on one spin-1/2 site
    if axis == "z":
        return _diagonal_value(state, lambda b: _czz_rows(b, r))
    if isinstance(state, ExactState):
        return _spin_spin_xy_exact(state, axis, r), 0.0
    return _mean_stderr(_spin_spin_xy_rows(state, axis, r))


def isotropic(state, r: int) -> tuple[float, float]:
    """C(r) = (C^xx + C^yy + C^zz)/3; per-sample averaged in stochastic mode."""
    _check_r(state.L, r)
    if r == 0:
        return 0.25, 0.0
    if isinstance(state, ExactState):
        vals = [spin_spin(state, a, r)[0] for a in ("x", "y", "z")]
        return float(np.mean(vals)), 0.0
    per = (
        _spin_spin_xy_rows(state, "x", r)
        + _spin_spin_xy_rows(state, "y", r)
        + _czz_rows(state.samples, r)
    ) / 3.0
    return _mean_stderr(per)


def dimer_dimer(state, r: int) -> tuple[float, float]:
    """Connected dimer-dimer correlator
    D(r) = (1/L) sum_l <Sz_l Sz_{l+1} Sz_{l+r} Sz_{l+r+1}> - C^zz(1)^2.

    Stochastic error bars propagate the subtraction to first order.
    """
    _check_r(state.L, r)
    four, err4 = _diagonal_value(state, lambda b: _dimer_rows(b, r))
    c1, err1 = _diagonal_value(state, lambda b: _czz_rows(b, 1))
    value = four - c1 * c1
    error = math.sqrt(err4**2 + (2.0 * abs(c1) * err1) ** 2)
    return value, error


def structure_factor(state, k: float) -> tuple[float, float]:
    """S(k) = (1/L) sum_ij e^{ik(i-j)} <Sz_i Sz_j> on the grid k = 2 pi m / L."""
    L = state.L
    m = k * L / (2.0 * math.pi)
    if abs(m - round(m)) > 1e-9:
        raise ValueError(f"k={k} is not on the 2*pi*m/{L} momentum grid")
    return _diagonal_value(state, lambda b: _sk_rows(b, k))


def tfim_m2(state) -> tuple[float, float]:
    """Pauli-normalized long-distance correlator (1/L) sum_i <sz_i sz_{i+L/2}>."""
    if state.L % 2 != 0:
        raise ValueError("m^2 uses the separation L/2 and needs even L")
    return _diagonal_value(state, _m2_rows)


def relative_error(e_model: float, e_ref: float) -> float:
    """|e_ref - e_model| / |e_ref|."""
    if e_ref == 0:
        raise ValueError("relative error is undefined for a zero reference")
    return abs(e_ref - e_model) / abs(e_ref)


# --------------------------------------------------------------------------
# series builders
# --------------------------------------------------------------------------


def _mode(state) -> str:
    return "exact" if isinstance(state, ExactState) else "mc"


def spin_spin_series(state, axis: str, rs=None) -> ObservableSeries:
    rs = np.arange(state.L) if rs is None else np.asarray(rs)
    pairs = [spin_spin(state, axis, int(r)) for r in rs]
    return ObservableSeries(
        kind=f"spin_spin_{axis}", abscissa=rs.astype(float),
        values=np.array([p[0] for p in pairs]), errors=np.array([p[1] for p in pairs]),
        mode=_mode(state),
    )


def isotropic_series(state, rs=None) -> ObservableSeries:
    rs = np.arange(state.L) if rs is None else np.asarray(rs)
    pairs = [isotropic(state, int(r)) for r in rs]
    return ObservableSeries(
        kind="isotropic", abscissa=rs.astype(float),
        values=np.array([p[0] for p in pairs]), errors=np.array([p[1] for p in pairs]),
        mode=_mode(state),
    )


def dimer_series(state, rs=None) -> ObservableSeries:
    rs = np.arange(state.L) if rs is None else np.asarray(rs)
    pairs = [dimer_dimer(state, int(r)) for r in rs]
    return ObservableSeries(
        kind="dimer_dimer", abscissa=rs.astype(float),
        values=np.array([p[0] for p in pairs]), errors=np.array([p[1] for p in pairs]),
        mode=_mode(state),
    )


def structure_factor_series(state, ms=None) -> ObservableSeries:
    ms = np.arange(state.L) if ms is None else np.asarray(ms)
    ks = 2.0 * math.pi * ms / state.L
    pairs = [structure_factor(state, float(k)) for k in ks]
    return ObservableSeries(
        kind="structure_factor", abscissa=ks,
        values=np.array([p[0] for p in pairs]), errors=np.array([p[1] for p in pairs]),
        mode=_mode(state),
    )
