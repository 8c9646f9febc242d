"""Metropolis-Hastings chains over spin configurations, p(s) ~ exp(2 log psi).

Two symmetric proposal kernels:

  local_flip     flip one uniformly chosen site (full 2^L space)
  pair_exchange  swap a uniformly chosen pair of opposite spins, either
                 anywhere on the chain (default, sector-ergodic in one move
                 class) or nearest-neighbour only (exchange_scope="nn")

A sweep is L proposal steps; samples are taken once per sweep.  Each chain
owns a numpy Generator spawned from one SeedSequence, so streams never
overlap and a seed fixes the whole trajectory.  All chains step together:
one batched log-psi evaluation per proposal step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MOVE_KINDS = ("local_flip", "pair_exchange")
EXCHANGE_SCOPES = ("any", "nn")

# sweeps drawn per random block; chunk boundaries do not change the streams
_SWEEP_BLOCK = 64


@dataclass(frozen=True)
class SamplerConfig:
    n_chains: int = 1024
    n_samples: int = 1024
    warmup_sweeps: int = 200
    move: str = "local_flip"
    seed: int = 0
    exchange_scope: str = "any"

    def __post_init__(self):
        if self.n_chains < 1 or self.n_samples < 1 or self.warmup_sweeps < 0:
            raise ValueError("sampler counts must be positive")
        if self.n_samples % self.n_chains != 0:
            raise ValueError("n_samples must be divisible by n_chains")
        if self.move not in MOVE_KINDS:
            raise ValueError(f"unknown move kind {self.move!r}")
        if self.exchange_scope not in EXCHANGE_SCOPES:
            raise ValueError(f"unknown exchange scope {self.exchange_scope!r}")


@dataclass
class ChainEnsemble:
    L: int
    move: str
    exchange_scope: str
    bits: np.ndarray                    # (n_chains, L) uint8
    log_psi: np.ndarray                 # cached log psi per chain
    gens: list = field(repr=False, default_factory=list)
    accepted: int = 0
    proposed: int = 0

    @property
    def n_chains(self) -> int:
        return self.bits.shape[0]

    def acceptance_rate(self) -> float:
        return self.accepted / self.proposed if self.proposed else 0.0

    def reset_counters(self) -> None:
        self.accepted = 0
        self.proposed = 0

    def refresh_cache(self, model) -> None:
        """Recompute cached log psi (call after the model parameters change)."""
        self.log_psi = model.log_psi_batch(self.bits)


def init_chains(cfg: SamplerConfig, L: int, model) -> ChainEnsemble:
    """Seeded ensemble: uniform random states (local_flip) or random
    zero-magnetization states (pair_exchange)."""
    if cfg.move == "pair_exchange" and L % 2 != 0:
        raise ValueError("pair_exchange sampling requires even L")
    children = np.random.SeedSequence(cfg.seed).spawn(cfg.n_chains)
    gens = [np.random.default_rng(c) for c in children]
    bits = np.zeros((cfg.n_chains, L), dtype=np.uint8)
    for i, gen in enumerate(gens):
        if cfg.move == "local_flip":
            bits[i] = gen.random(L) < 0.5
        else:
            bits[i, gen.permutation(L)[: L // 2]] = 1
    ens = ChainEnsemble(
        L=L, move=cfg.move, exchange_scope=cfg.exchange_scope,
        bits=bits, log_psi=np.zeros(cfg.n_chains), gens=gens,
    )
    ens.refresh_cache(model)
    return ens


def _rand_block(ens: ChainEnsemble, n_sweeps: int, width: int) -> np.ndarray:
    return np.stack([g.random((n_sweeps * ens.L, width)) for g in ens.gens])


def _step(ens: ChainEnsemble, model, r: np.ndarray) -> None:
    """One proposal per chain; r holds this step's uniforms, one row per chain."""
    bits = ens.bits
    B, L = bits.shape
    chain_idx = np.arange(B)
    ok = None
    if ens.move == "local_flip":
        sites = (r[:, 0] * L).astype(np.int64)
        prop = bits.copy()
        prop[chain_idx, sites] ^= 1
    elif ens.exchange_scope == "any":
        n_half = L // 2
        order = np.argsort(bits, axis=1, kind="stable")
        downs = order[:, :n_half]
        ups = order[:, n_half:]
        site_u = ups[chain_idx, (r[:, 0] * n_half).astype(np.int64)]
        site_d = downs[chain_idx, (r[:, 1] * n_half).astype(np.int64)]
        prop = bits.copy()
        prop[chain_idx, site_u] = 0
        prop[chain_idx, site_d] = 1
    else:
        sites = (r[:, 0] * L).astype(np.int64)
        nxt = (sites + 1) % L
        ok = bits[chain_idx, sites] != bits[chain_idx, nxt]
        prop = bits.copy()
        rows = chain_idx[ok]
        prop[rows, sites[ok]] ^= 1
        prop[rows, nxt[ok]] ^= 1
    log_prop = model.log_psi_batch(prop)
    with np.errstate(divide="ignore"):
        accept = np.log(r[:, -1]) < 2.0 * (log_prop - ens.log_psi)
    if ok is not None:
        accept &= ok  # equal-spin NN picks are null proposals, counted as rejected
    ens.bits[accept] = prop[accept]
    ens.log_psi[accept] = log_prop[accept]
    ens.proposed += B
    ens.accepted += int(accept.sum())


def metropolis_sweep(ens: ChainEnsemble, model, n_sweeps: int = 1,
                     collect: np.ndarray | None = None) -> None:
    """Run n_sweeps sweeps of L proposals each on every chain.

    If `collect` is given (shape (n_chains, n_sweeps, L)), the chain states
    after each sweep are written into it.
    """
    width = 3 if (ens.move == "pair_exchange" and ens.exchange_scope == "any") else 2
    done = 0
    while done < n_sweeps:
        todo = min(_SWEEP_BLOCK, n_sweeps - done)
        block = _rand_block(ens, todo, width)
        for s in range(todo):
            for step in range(ens.L):
                _step(ens, model, block[:, s * ens.L + step, :])
            if collect is not None:
                collect[:, done + s, :] = ens.bits
        done += todo


def draw_samples(ens: ChainEnsemble, model, cfg: SamplerConfig):
    """Collect n_samples sweep-separated states, concatenated in chain order.

    Returns (samples, acceptance_rate) where samples has shape
    (n_samples, L): chain 0's consecutive states first, then chain 1's, ...
    The rate covers exactly this call's proposals.
    """
    per_chain = cfg.n_samples // cfg.n_chains
    if ens.n_chains != cfg.n_chains:
        raise ValueError("ensemble size does not match the sampler config")
    ens.reset_counters()
    out = np.empty((ens.n_chains, per_chain, ens.L), dtype=np.uint8)
    metropolis_sweep(ens, model, per_chain, collect=out)
    return out.reshape(cfg.n_samples, ens.L), ens.acceptance_rate()
