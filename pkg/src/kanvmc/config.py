"""Run configuration: YAML schema, validation, and assembly of the typed
blocks the engine consumes.

A config file has up to six blocks (model, hamiltonian, sampler, training,
output, and the command-specific ed/observe/bench blocks).  Unknown keys are
rejected everywhere; every acceptance run in this repository is expressible
as one of these files with no code edits.  See README.md for the full
schema and the worked examples under configs/.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import yaml

from .ansatz import ModelSpec
from .hamiltonian import BIAS_AXES, BiasField, HamiltonianModel
from .sampler import EXCHANGE_SCOPES, MOVE_KINDS, SamplerConfig
from .vmc import AnnealingSpec, LrSchedule, TrainingPlan


class ConfigError(ValueError):
    pass


def _check_keys(block: dict, allowed: set[str], where: str) -> None:
    unknown = set(block) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in {where}")


def _get(block: dict, key: str, default=None, required: bool = False):
    if required and key not in block:
        raise ConfigError(f"missing required key {key!r}")
    return block.get(key, default)


@dataclass(frozen=True)
class OutputSpec:
    dir: str = "runs"
    emit_history: bool = True
    emit_checkpoint: bool = True
    emit_results: bool = True
    compare_ed: str = "auto"   # auto | always | never


@dataclass(frozen=True)
class ObserveSpec:
    mode: str = "exact"        # exact | mc
    observables: tuple[str, ...] = ("isotropic", "dimer_dimer", "structure_factor")
    n_samples: int = 0         # 0 = reuse sampler block settings


@dataclass(frozen=True)
class EdSpec:
    k: int = 4
    tol: float = 1e-9


@dataclass(frozen=True)
class BenchSpec:
    lengths: tuple[int, ...] = (16, 32, 64, 128, 256)
    passes: int = 100_000
    warmup_passes: int = 200_000


@dataclass(frozen=True)
class RunConfig:
    model: ModelSpec
    hamiltonian: HamiltonianModel
    sampler: SamplerConfig
    training: TrainingPlan
    output: OutputSpec
    observe: ObserveSpec = field(default_factory=ObserveSpec)
    ed: EdSpec = field(default_factory=EdSpec)
    bench: BenchSpec = field(default_factory=BenchSpec)
    raw: dict = field(default_factory=dict, repr=False)


# --------------------------------------------------------------------------
# block parsers
# --------------------------------------------------------------------------


def _parse_model(block: dict, L: int) -> ModelSpec:
    _check_keys(block, {"kind", "hidden_dims", "grid_size", "alpha", "reflected",
                        "seed", "freq_init", "delta_max"}, "model")
    kind = _get(block, "kind", required=True)
    if kind not in ("sinekan", "mlp", "rbm"):
        raise ConfigError(f"unknown model kind {kind!r}")
    hidden = tuple(int(d) for d in _get(block, "hidden_dims",
                                        (64, 64) if kind == "sinekan" else (256, 256)))
    return ModelSpec(
        kind=kind,
        L=L,
        hidden_dims=hidden,
        grid_size=int(_get(block, "grid_size", 8)),
        alpha=int(_get(block, "alpha", 128)),
        reflected=bool(_get(block, "reflected", False)),
        seed=int(_get(block, "seed", 0)),
        freq_init=str(_get(block, "freq_init", "ramp_unit")),
        delta_max=float(_get(block, "delta_max", 0.01)),
    )


def _parse_hamiltonian(block: dict) -> HamiltonianModel:
    _check_keys(block, {"kind", "L", "J", "h_field", "gamma", "J1", "J2", "msr", "bias"},
                "hamiltonian")
    kind = _get(block, "kind", required=True)
    L = int(_get(block, "L", required=True))
    bias_block = _get(block, "bias", {}) or {}
    _check_keys(bias_block, {"axis", "strength"}, "hamiltonian.bias")
    axis = _get(bias_block, "axis", "none")
    strength = float(_get(bias_block, "strength", 0.0))
    if axis == "auto":
        gamma = float(_get(block, "gamma", 0.0))
        axis = "none" if strength == 0 else ("staggered_z" if gamma < 0.9 else "uniform_x")
    if axis not in BIAS_AXES:
        raise ConfigError(f"unknown bias axis {axis!r}")
    try:
        return HamiltonianModel(
            kind=kind,
            L=L,
            J=float(_get(block, "J", 1.0)),
            h_field=float(_get(block, "h_field", 0.0)),
            gamma=float(_get(block, "gamma", 0.0)),
            J1=float(_get(block, "J1", 1.0)),
            J2=float(_get(block, "J2", 0.0)),
            msr=bool(_get(block, "msr", False)),
            bias=BiasField(axis=axis, strength=strength),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _parse_sampler(block: dict, ham: HamiltonianModel, annealing_on: bool) -> SamplerConfig:
    _check_keys(block, {"n_chains", "n_samples", "warmup_sweeps", "move",
                        "exchange_scope", "seed"}, "sampler")
    move = _get(block, "move", "auto")
    if move == "auto":
        sector_breaking = ham.bias.axis == "uniform_x" or (
            annealing_on and ham.kind == "ahm" and ham.gamma >= 0.9
        )
        move = "local_flip" if (ham.kind == "tfim" or sector_breaking) else "pair_exchange"
    if move not in MOVE_KINDS:
        raise ConfigError(f"unknown move kind {move!r}")
    if move == "pair_exchange" and ham.L % 2 != 0:
        raise ConfigError("pair_exchange sampling needs even L (zero-magnetization sector)")
    if move == "pair_exchange" and ham.kind == "tfim":
        raise ConfigError("the tfim is not closed on the zero-magnetization sector")
    scope = _get(block, "exchange_scope", "any")
    if scope not in EXCHANGE_SCOPES:
        raise ConfigError(f"unknown exchange scope {scope!r}")
    try:
        return SamplerConfig(
            n_chains=int(_get(block, "n_chains", 1024)),
            n_samples=int(_get(block, "n_samples", 1024)),
            warmup_sweeps=int(_get(block, "warmup_sweeps", 200)),
            move=move,
            seed=int(_get(block, "seed", 0)),
            exchange_scope=scope,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _parse_training(block: dict, ham: HamiltonianModel) -> TrainingPlan:
    _check_keys(block, {"epochs", "lr", "annealing", "clamp"}, "training")
    anneal_block = _get(block, "annealing", {}) or {}
    _check_keys(anneal_block, {"enabled", "h_init", "n_stages", "iters_per_stage",
                               "post_iters"}, "training.annealing")
    annealing = None
    if anneal_block.get("enabled", False):
        if ham.kind != "ahm":
            raise ConfigError("annealing is defined for the ahm only")
        h_init = _get(anneal_block, "h_init", "auto")
        if h_init == "auto":
            h_init = ham.gamma + 0.2
        annealing = AnnealingSpec(
            h_init=float(h_init),
            n_stages=int(_get(anneal_block, "n_stages", 15)),
            iters_per_stage=int(_get(anneal_block, "iters_per_stage", 333)),
            post_iters=int(_get(anneal_block, "post_iters", 5005)),
        )

    epochs = _get(block, "epochs")
    if annealing is not None:
        if epochs is not None and int(epochs) != annealing.total_epochs:
            raise ConfigError(
                f"epochs={epochs} contradicts the annealing plan "
                f"({annealing.total_epochs} epochs)"
            )
        epochs = annealing.total_epochs
    if epochs is None:
        raise ConfigError("missing required key 'epochs'")
    epochs = int(epochs)

    lr_block = _get(block, "lr", required=True)
    _check_keys(lr_block, {"kind", "value", "flat_epochs", "end_value", "points"},
                "training.lr")
    lr_kind = _get(lr_block, "kind", "flat")
    try:
        if lr_kind == "flat":
            schedule = LrSchedule.flat(epochs, float(_get(lr_block, "value", required=True)))
        elif lr_kind == "flat_then_linear":
            schedule = LrSchedule.flat_then_linear(
                epochs,
                int(_get(lr_block, "flat_epochs", required=True)),
                float(_get(lr_block, "value", required=True)),
                float(_get(lr_block, "end_value", required=True)),
            )
        elif lr_kind == "points":
            pts = tuple((int(t), float(v)) for t, v in _get(lr_block, "points", required=True))
            schedule = LrSchedule(epochs, pts)
        else:
            raise ConfigError(f"unknown lr schedule kind {lr_kind!r}")
        return TrainingPlan(
            epochs=epochs,
            schedule=schedule,
            annealing=annealing,
            clamp=float(_get(block, "clamp", 60.0)),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _parse_output(block: dict) -> OutputSpec:
    _check_keys(block, {"dir", "emit_history", "emit_checkpoint", "emit_results",
                        "compare_ed"}, "output")
    compare = _get(block, "compare_ed", "auto")
    if compare not in ("auto", "always", "never"):
        raise ConfigError(f"compare_ed must be auto/always/never, got {compare!r}")
    return OutputSpec(
        dir=str(_get(block, "dir", "runs")),
        emit_history=bool(_get(block, "emit_history", True)),
        emit_checkpoint=bool(_get(block, "emit_checkpoint", True)),
        emit_results=bool(_get(block, "emit_results", True)),
        compare_ed=compare,
    )


def parse_config(raw: dict) -> RunConfig:
    """Validate a config dict and assemble the typed blocks."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    _check_keys(raw, {"model", "hamiltonian", "sampler", "training", "output",
                      "observe", "ed", "bench"}, "config root")
    for key in ("model", "hamiltonian", "training"):
        if key not in raw:
            raise ConfigError(f"missing required block {key!r}")

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # model instantiation happens later
        ham = _parse_hamiltonian(raw["hamiltonian"])
    model = _parse_model(raw["model"], ham.L)
    training = _parse_training(raw["training"], ham)
    sampler = _parse_sampler(raw.get("sampler", {}) or {}, ham,
                             training.annealing is not None)
    output = _parse_output(raw.get("output", {}) or {})

    observe_block = raw.get("observe", {}) or {}
    _check_keys(observe_block, {"mode", "observables", "n_samples"}, "observe")
    mode = _get(observe_block, "mode", "exact")
    if mode not in ("exact", "mc"):
        raise ConfigError(f"observe mode must be exact or mc, got {mode!r}")
    observe = ObserveSpec(
        mode=mode,
        observables=tuple(_get(observe_block, "observables",
                               ("isotropic", "dimer_dimer", "structure_factor"))),
        n_samples=int(_get(observe_block, "n_samples", 0)),
    )
    known = {"spin_spin_x", "spin_spin_y", "spin_spin_z", "isotropic",
             "dimer_dimer", "structure_factor", "m2"}
    bad = set(observe.observables) - known
    if bad:
        raise ConfigError(f"unknown observable(s) {sorted(bad)}")

    ed_block = raw.get("ed", {}) or {}
    _check_keys(ed_block, {"k", "tol"}, "ed")
    ed = EdSpec(k=int(_get(ed_block, "k", 4)), tol=float(_get(ed_block, "tol", 1e-9)))

    bench_block = raw.get("bench", {}) or {}
    _check_keys(bench_block, {"lengths", "passes", "warmup_passes"}, "bench")
    bench = BenchSpec(
        lengths=tuple(int(x) for x in _get(bench_block, "lengths", (16, 32, 64, 128, 256))),
        passes=int(_get(bench_block, "passes", 100_000)),
        warmup_passes=int(_get(bench_block, "warmup_passes", 200_000)),
    )

    if model.kind == "sinekan":
        hidden = model.hidden_dims[:-1] if model.hidden_dims[-1:] == (1,) else model.hidden_dims
        if model.grid_size**2 == ham.L and any(abs(d - ham.L) <= 0.1 * ham.L for d in hidden):
            warnings.warn(
                f"grid size {model.grid_size} = sqrt(L={ham.L}) with hidden dims near L "
                "is a known failure case; prefer grid sqrt(L) +- 1",
                UserWarning,
                stacklevel=2,
            )

    return RunConfig(model=model, hamiltonian=ham, sampler=sampler, training=training,
                     output=output, observe=observe, ed=ed, bench=bench, raw=raw)


def load_config(path: str) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = yaml.safe_load(f)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return parse_config(raw or {})


def apply_overrides(run: RunConfig, seed: int | None = None,
                    out_dir: str | None = None, desk_scale: bool = False) -> RunConfig:
    """CLI-level overrides: --seed reseeds both model and sampler, --out moves
    the output dir, --desk-scale caps the sampling budget (chains, samples,
    warmup) without touching schedules."""
    from dataclasses import replace

    model, sampler, output = run.model, run.sampler, run.output
    if seed is not None:
        model = replace(model, seed=seed)
        sampler = replace(sampler, seed=seed)
    if out_dir is not None:
        output = replace(output, dir=out_dir)
    if desk_scale:
        n_chains = min(sampler.n_chains, 256)
        per_chain = max(sampler.n_samples // sampler.n_chains, 1)
        sampler = replace(sampler, n_chains=n_chains, n_samples=n_chains * per_chain,
                          warmup_sweeps=min(sampler.warmup_sweeps, 100))
    return replace(run, model=model, sampler=sampler, output=output)
