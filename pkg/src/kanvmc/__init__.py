"""Variational Monte Carlo for 1D spin-1/2 chains with sine-KAN, MLP and RBM
wavefunctions, verified against a built-in exact-diagonalization oracle."""

from .ansatz import ModelSpec, build_model, init_mlp, init_rbm, init_sinekan
from .checkpoint import checkpoint_load, checkpoint_save
from .config import RunConfig, load_config, parse_config
from .exact import EdSolution, TableModel, ed_solve, fidelity, model_vector
from .hamiltonian import BiasField, HamiltonianModel, ahm, connections, j1j2, msr_sign, tfim, with_bias
from .sampler import ChainEnsemble, SamplerConfig, draw_samples, init_chains, metropolis_sweep
from .spins import SectorBasis, SpinConfiguration, enumerate_sector
from .vmc import (
    AdamState,
    AnnealingSpec,
    LrSchedule,
    TrainingPlan,
    TrainResult,
    VmcEstimate,
    adam_step,
    annealing_field,
    estimate,
    gradient,
    local_energy,
    train,
)

__version__ = "0.1.0"
