"""Estimators and the training loop.

The local energy of a sampled configuration s is

    E_loc(s) = sum_{s'} <s'|H|s> psi(s')/psi(s)
             = diag(s) + sum_offdiag amp * exp(log_psi(s') - log_psi(s)),

its sample mean estimates the variational energy and its sample variance
vanishes on eigenstates.  The energy gradient uses the centered
log-derivative estimator

    G_k = 2 < (D_k - <D_k>) E_loc >,      D_k = d(log psi)/d(theta_k),

computed with two weighted reverse passes, never materializing per-sample
D rows.  All reductions run in fixed index order, so a seed determines a
training run bit for bit on one platform.

Parameters are updated with Adam under a piecewise-linear learning-rate
schedule; an optional annealing plan ramps an ahm pinning field to zero in
equal stages before a final bias-free phase.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .ansatz import build_model
from .hamiltonian import HamiltonianModel, connection_candidates, diagonal_energy, with_bias
from .sampler import draw_samples, init_chains, metropolis_sweep


class NumericalAbort(RuntimeError):
    """Raised when a training estimate turns non-finite."""


# --------------------------------------------------------------------------
# estimators
# --------------------------------------------------------------------------


def local_energy_batch(model, ham: HamiltonianModel, bits: np.ndarray,
                       src_log_psi: np.ndarray | None = None,
                       clamp: float = 60.0):
    """Local energies for a (B, L) batch; returns (eloc, n_clamped).

    Log-amplitude ratios are clipped at +-clamp before exponentiation; the
    clip count is reported so runs can surface overflow pressure.
    """
    bits = np.atleast_2d(np.asarray(bits, dtype=np.uint8))
    diag = diagonal_energy(ham, bits)
    cand, rows, amps = connection_candidates(ham, bits)
    if cand.shape[0] == 0:
        return diag, 0
    if src_log_psi is None:
        src_log_psi = model.log_psi_batch(bits)
    dy = model.log_psi_batch(cand) - src_log_psi[rows]
    n_clamped = int((np.abs(dy) > clamp).sum())
    if n_clamped:
        dy = np.clip(dy, -clamp, clamp)
    contrib = amps * np.exp(dy)
    return diag + np.bincount(rows, weights=contrib, minlength=bits.shape[0]), n_clamped


def local_energy(model, ham: HamiltonianModel, config) -> float:
    """E_loc for a single configuration."""
    return float(local_energy_batch(model, ham, config.bits[None, :])[0][0])


@dataclass(frozen=True)
class VmcEstimate:
    energy: float
    variance: float
    stderr: float
    acceptance: float
    n_samples: int


def _moments(eloc: np.ndarray, weights: np.ndarray | None):
    if weights is None:
        mean = float(eloc.mean())
        var = float(np.mean((eloc - mean) ** 2))
    else:
        wsum = float(weights.sum())
        mean = float(np.dot(weights, eloc) / wsum)
        var = float(np.dot(weights, (eloc - mean) ** 2) / wsum)
    return mean, max(var, 0.0)


def estimate(model, ham: HamiltonianModel, samples: np.ndarray,
             weights: np.ndarray | None = None, acceptance: float = math.nan,
             clamp: float = 60.0) -> VmcEstimate:
    """Sample mean/variance of the local energy over a batch.

    `weights` switches to exhaustive mode: samples are weighted by the given
    probabilities instead of counted, making the estimate exact on a fully
    enumerated space.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=np.uint8))
    if samples.shape[0] == 0:
        raise ValueError("estimate requires at least one sample")
    eloc, _ = local_energy_batch(model, ham, samples, clamp=clamp)
    mean, var = _moments(eloc, weights)
    n = samples.shape[0]
    return VmcEstimate(
        energy=mean, variance=var, stderr=math.sqrt(var / n),
        acceptance=acceptance, n_samples=n,
    )


def gradient(model, ham: HamiltonianModel, samples: np.ndarray,
             weights: np.ndarray | None = None,
             eloc: np.ndarray | None = None, clamp: float = 60.0) -> np.ndarray:
    """Centered log-derivative gradient estimate G over the flat parameters."""
    samples = np.atleast_2d(np.asarray(samples, dtype=np.uint8))
    if samples.shape[0] == 0:
        raise ValueError("gradient requires at least one sample")
    if eloc is None:
        eloc, _ = local_energy_batch(model, ham, samples, clamp=clamp)
    if weights is None:
        w = np.full(samples.shape[0], 1.0 / samples.shape[0])
    else:
        w = np.asarray(weights, dtype=np.float64)
        w = w / w.sum()
    mean_e = float(np.dot(w, eloc))
    d_e = model.weighted_grad_sum(samples, w * eloc)
    d_bar = model.weighted_grad_sum(samples, w)
    return 2.0 * (d_e - mean_e * d_bar)


# --------------------------------------------------------------------------
# Adam
# --------------------------------------------------------------------------


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n_params: int, **kwargs) -> "AdamState":
        return cls(m=np.zeros(n_params), v=np.zeros(n_params), **kwargs)


def adam_step(state: AdamState, theta: np.ndarray, grad: np.ndarray, lr: float):
    """Standard bias-corrected Adam update, applied to theta in place."""
    if theta.shape != grad.shape or theta.shape != state.m.shape:
        raise ValueError("parameter/gradient/moment sizes do not match")
    state.step += 1
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * grad
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1 ** state.step)
    v_hat = state.v / (1.0 - state.beta2 ** state.step)
    theta -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return theta, state


# --------------------------------------------------------------------------
# schedules
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class LrSchedule:
    """Piecewise-linear lr(t) through (epoch, lr) breakpoints."""

    total_epochs: int
    points: tuple = ()

    def __post_init__(self):
        if self.total_epochs < 1:
            raise ValueError("schedule needs at least one epoch")
        ts = [t for t, _ in self.points]
        if not self.points or ts != sorted(ts) or ts[0] != 0:
            raise ValueError("breakpoints must start at 0 and be sorted")
        if any(lr <= 0 for _, lr in self.points):
            raise ValueError("learning rates must be positive")

    @classmethod
    def flat(cls, total_epochs: int, lr: float) -> "LrSchedule":
        return cls(total_epochs, ((0, lr), (max(total_epochs - 1, 0), lr))
                   if total_epochs > 1 else ((0, lr),))

    @classmethod
    def flat_then_linear(cls, total_epochs: int, flat_epochs: int,
                         lr: float, end_lr: float) -> "LrSchedule":
        """Constant lr for flat_epochs, then a linear ramp hitting end_lr at
        the final epoch (hold, then ramp down)."""
        if not 0 < flat_epochs < total_epochs:
            raise ValueError("flat_epochs must lie inside the run")
        return cls(total_epochs, ((0, lr), (flat_epochs, lr), (total_epochs - 1, end_lr)))

    def lr_at(self, t: int) -> float:
        if not 0 <= t < self.total_epochs:
            raise ValueError(f"epoch {t} outside [0, {self.total_epochs})")
        ts = [p[0] for p in self.points]
        lrs = [p[1] for p in self.points]
        return float(np.interp(t, ts, lrs))


def lr_at(schedule: LrSchedule, t: int) -> float:
    return schedule.lr_at(t)


@dataclass(frozen=True)
class AnnealingSpec:
    """Pinning-field quench: n_stages equal ramps to zero, then a bias-free tail."""

    h_init: float
    n_stages: int = 15
    iters_per_stage: int = 333
    post_iters: int = 5005

    def __post_init__(self):
        if self.h_init < 0:
            raise ValueError("h_init must be >= 0")
        if self.n_stages < 1 or self.iters_per_stage < 1 or self.post_iters < 0:
            raise ValueError("annealing stage fields must be positive")

    @property
    def total_epochs(self) -> int:
        return self.n_stages * self.iters_per_stage + self.post_iters


def annealing_field(spec: AnnealingSpec, stage: int) -> float:
    """Field strength h_n = h_init * (1 - (n+1)/n_stages) at stage n."""
    if not 0 <= stage < spec.n_stages:
        raise ValueError(f"stage {stage} outside [0, {spec.n_stages})")
    return spec.h_init * (1.0 - (stage + 1) / spec.n_stages)


def _field_at_epoch(spec: AnnealingSpec, epoch: int) -> float:
    ramp = spec.n_stages * spec.iters_per_stage
    if epoch >= ramp:
        return 0.0
    return annealing_field(spec, epoch // spec.iters_per_stage)


@dataclass(frozen=True)
class TrainingPlan:
    epochs: int
    schedule: LrSchedule
    annealing: AnnealingSpec | None = None
    clamp: float = 60.0

    def __post_init__(self):
        if self.epochs != self.schedule.total_epochs:
            raise ValueError("schedule length does not match epochs")
        if self.annealing is not None and self.annealing.total_epochs != self.epochs:
            raise ValueError("annealing plan does not add up to epochs")


HISTORY_COLUMNS = ("epoch", "energy", "variance", "stderr", "acceptance",
                   "lr", "bias_h", "clamp_count")


@dataclass
class TrainResult:
    model: object
    history: list = field(default_factory=list)
    ensemble: object = None

    @property
    def final_energy(self) -> float:
        return self.history[-1]["energy"]


def train(run, progress=None) -> TrainResult:
    """One sample-estimate-update cycle per epoch.

    `run` carries the four blocks: .model (ModelSpec), .hamiltonian
    (HamiltonianModel), .sampler (SamplerConfig), .training (TrainingPlan).
    An optional `progress(epoch, row)` callback observes each history row.
    """
    model = build_model(run.model)
    base_ham = run.hamiltonian
    plan = run.training
    cfg = run.sampler

    anneal = plan.annealing
    if anneal is not None and base_ham.kind != "ahm":
        raise ValueError("annealing is defined for the ahm only")

    ens = init_chains(cfg, base_ham.L, model)
    metropolis_sweep(ens, model, cfg.warmup_sweeps)
    opt = AdamState.zeros(model.param_count())

    ham = base_ham
    current_h = None
    history = []
    ones = None
    for epoch in range(plan.epochs):
        if anneal is not None:
            h = _field_at_epoch(anneal, epoch)
            if h != current_h:
                ham = with_bias(base_ham, h)
                current_h = h
        else:
            h = base_ham.bias.strength

        samples, acc = draw_samples(ens, model, cfg)
        eloc, n_clamped = local_energy_batch(model, ham, samples, clamp=plan.clamp)
        energy = float(eloc.mean())
        var = max(float(np.mean((eloc - energy) ** 2)), 0.0)
        if not math.isfinite(energy) or not math.isfinite(var):
            raise NumericalAbort(
                f"non-finite energy estimate at epoch {epoch} "
                f"(energy={energy}, variance={var}, clamped={n_clamped})"
            )

        n = samples.shape[0]
        if ones is None or ones.shape[0] != n:
            ones = np.full(n, 1.0 / n)
        d_e = model.weighted_grad_sum(samples, eloc / n)
        d_bar = model.weighted_grad_sum(samples, ones)
        grad = 2.0 * (d_e - energy * d_bar)

        lr = plan.schedule.lr_at(epoch)
        adam_step(opt, model.theta, grad, lr)
        model.refresh()
        ens.refresh_cache(model)

        row = {
            "epoch": epoch,
            "energy": energy,
            "variance": var,
            "stderr": math.sqrt(var / n),
            "acceptance": acc,
            "lr": lr,
            "bias_h": h,
            "clamp_count": n_clamped,
        }
        history.append(row)
        if progress is not None:
            progress(epoch, row)
    return TrainResult(model=model, history=history, ensemble=ens)
