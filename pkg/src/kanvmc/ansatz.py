"""Log-amplitude wavefunction models: psi(s) = exp(y(s)) with y real.

Three architectures share one interface:

  SineKan  stacked layers y_m = sum_{n,l} A[m,n,l] sin(w[n,l] x_l + phi[n,l]) + b_m
           with fixed phases phi[n,l] = pi*n/N + pi*l/I + delta[n,l]
  Mlp      affine layers with rectifier activations between hidden layers
  Rbm      y = a.s + sum_j log(2 cosh(b_j + W_j . s))

Every model evaluates batches of configurations (uint8 bit rows, converted
to sigma = +-1 internally) and provides exact reverse-mode derivatives of y
with respect to every trainable parameter.  Parameters live in one flat
vector `theta`; layer arrays are views into it, so an in-place optimizer
update is visible everywhere after `refresh()`.

Reflection symmetrization wraps any architecture: y = f(s) + f(reflect(s)).
Gradients then sum both passes.

Flat layout (layout version 1):
  sinekan  per layer: A (M,N,I) C-order, omega (N,I), bias (M)
  mlp      per layer: W (out,in) C-order, bias (out)
  rbm      a (L), W (n_hidden, L) C-order, b (n_hidden)
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .spins import bits_to_sigma

LAYOUT_VERSION = 1

# rows per forward chunk; bounds the (B, N*I) scratch arrays
_CHUNK = 16384


class GridAnomalyWarning(UserWarning):
    """Grid size sqrt(L) with hidden dims near L degrades sine-KAN training."""


# --------------------------------------------------------------------------
# sine-KAN layer
# --------------------------------------------------------------------------


class SineKanLayer:
    """One learnable-sine layer mapping I inputs to M outputs over N grid points."""

    def __init__(self, in_dim: int, out_dim: int, grid_size: int,
                 amplitudes: np.ndarray, frequencies: np.ndarray,
                 bias: np.ndarray, delta: np.ndarray):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.grid_size = grid_size
        self.amplitudes = amplitudes      # (M, N, I) view into theta
        self.frequencies = frequencies    # (N, I) view into theta
        self.bias = bias                  # (M,) view into theta
        self.delta = delta                # (N, I) frozen
        n = np.arange(grid_size, dtype=np.float64)[:, None]
        l = np.arange(in_dim, dtype=np.float64)[None, :]
        self.phase = np.pi * n / grid_size + np.pi * l / in_dim + delta

    @property
    def n_params(self) -> int:
        m, n, i = self.out_dim, self.grid_size, self.in_dim
        return m * n * i + n * i + m

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Evaluate the layer on a (B, I) batch (no gradient bookkeeping)."""
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ValueError(f"expected (B, {self.in_dim}) input, got {x.shape}")
        t = self.frequencies[None, :, :] * x[:, None, :]
        t += self.phase[None, :, :]
        s = np.sin(t, out=t)
        y = s.reshape(x.shape[0], -1) @ self.amplitudes.reshape(self.out_dim, -1).T
        y += self.bias
        return y

    def forward_cached(self, x: np.ndarray):
        """Forward pass keeping the sin/cos tables needed by backward()."""
        t = self.frequencies[None, :, :] * x[:, None, :]
        t += self.phase[None, :, :]
        s = np.sin(t)
        c = np.cos(t, out=t)
        y = s.reshape(x.shape[0], -1) @ self.amplitudes.reshape(self.out_dim, -1).T
        y += self.bias
        return y, (x, s, c)

    def backward(self, cache, gy: np.ndarray, grads: "SineKanLayer") -> np.ndarray:
        """Accumulate parameter gradients for cotangent gy; return gx."""
        x, s, c = cache
        B = x.shape[0]
        a2 = self.amplitudes.reshape(self.out_dim, -1)
        grads.amplitudes += (gy.T @ s.reshape(B, -1)).reshape(self.amplitudes.shape)
        grads.bias += gy.sum(axis=0)
        z = (gy @ a2).reshape(B, self.grid_size, self.in_dim)
        z *= c
        grads.frequencies += np.einsum("bnl,bl->nl", z, x)
        return (z * self.frequencies[None, :, :]).sum(axis=1)

    def pm1_table(self) -> tuple[np.ndarray, np.ndarray]:
        """Collapse the layer for inputs restricted to {-1, +1}.

        sin(w*x + phi) takes only two values per (n, l); folding them into the
        amplitude contraction gives y = u @ W01.T + base with u in {0, 1}.
        """
        f_plus = np.sin(self.frequencies + self.phase)
        f_minus = np.sin(-self.frequencies + self.phase)
        a = self.amplitudes
        w01 = np.einsum("mnl,nl->ml", a, f_plus - f_minus)
        base = np.einsum("mnl,nl->m", a, f_minus) + self.bias
        return w01, base


def sinekan_layer_param_count(in_dim: int, out_dim: int, grid_size: int) -> int:
    return out_dim * grid_size * in_dim + grid_size * in_dim + out_dim


# --------------------------------------------------------------------------
# model base
# --------------------------------------------------------------------------


class Ansatz:
    """Common surface: batched log-amplitudes and exact parameter gradients."""

    kind: str
    L: int
    reflected: bool
    seed: int
    theta: np.ndarray

    def param_count(self) -> int:
        return self.theta.size

    def flatten(self) -> np.ndarray:
        return self.theta.copy()

    def unflatten(self, vec: np.ndarray) -> "Ansatz":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != self.theta.shape:
            raise ValueError(f"expected {self.theta.size} parameters, got {vec.size}")
        self.theta[:] = vec
        self.refresh()
        return self

    def refresh(self) -> None:
        """Rebuild any caches derived from theta (call after mutating it)."""

    # concrete models implement the single-pass versions
    def _forward_bits(self, bits: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _weighted_grad_single(self, sigma: np.ndarray, w: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def log_psi_batch(self, bits: np.ndarray) -> np.ndarray:
        """log psi for each row of a (B, L) uint8 bit array."""
        bits = np.atleast_2d(np.asarray(bits, dtype=np.uint8))
        if bits.shape[1] != self.L:
            raise ValueError(f"configuration length {bits.shape[1]} != L={self.L}")
        out = np.empty(bits.shape[0])
        for lo in range(0, bits.shape[0], _CHUNK):
            chunk = bits[lo : lo + _CHUNK]
            y = self._forward_bits(chunk)
            if self.reflected:
                y = y + self._forward_bits(chunk[:, ::-1])
            out[lo : lo + _CHUNK] = y
        return out

    def log_psi(self, config) -> float:
        return float(self.log_psi_batch(config.bits[None, :])[0])

    def weighted_grad_sum(self, bits: np.ndarray, weights: np.ndarray) -> np.ndarray:
        """sum_b weights[b] * d(log psi(bits[b]))/d(theta), one reverse pass."""
        bits = np.atleast_2d(np.asarray(bits, dtype=np.uint8))
        weights = np.asarray(weights, dtype=np.float64)
        if bits.shape[1] != self.L:
            raise ValueError(f"configuration length {bits.shape[1]} != L={self.L}")
        if weights.shape != (bits.shape[0],):
            raise ValueError("weights must be one scalar per configuration")
        total = np.zeros_like(self.theta)
        for lo in range(0, bits.shape[0], _CHUNK):
            chunk = bits[lo : lo + _CHUNK]
            w = weights[lo : lo + _CHUNK]
            sigma = bits_to_sigma(chunk)
            total += self._weighted_grad_single(sigma, w)
            if self.reflected:
                total += self._weighted_grad_single(sigma[:, ::-1], w)
        return total

    def grad_log_psi(self, config) -> np.ndarray:
        """Exact derivative of log psi with respect to every trainable parameter."""
        return self.weighted_grad_sum(config.bits[None, :], np.ones(1))


# --------------------------------------------------------------------------
# sine-KAN model
# --------------------------------------------------------------------------


class SineKan(Ansatz):
    kind = "sinekan"

    def __init__(self, L: int, dims: list[int], grid_size: int, reflected: bool,
                 seed: int, theta: np.ndarray, deltas: list[np.ndarray],
                 freq_init: str = "ramp", delta_max: float = 0.01):
        self.L = L
        self.dims = list(dims)
        self.grid_size = grid_size
        self.reflected = reflected
        self.seed = seed
        self.theta = theta
        self.freq_init = freq_init
        self.delta_max = delta_max
        self.layers: list[SineKanLayer] = []
        offset = 0
        in_dim = L
        for out_dim, delta in zip(dims, deltas):
            m, n = out_dim, grid_size
            a = theta[offset : offset + m * n * in_dim].reshape(m, n, in_dim)
            offset += m * n * in_dim
            w = theta[offset : offset + n * in_dim].reshape(n, in_dim)
            offset += n * in_dim
            b = theta[offset : offset + m]
            offset += m
            self.layers.append(SineKanLayer(in_dim, out_dim, n, a, w, b, delta))
            in_dim = out_dim
        assert offset == theta.size
        self.refresh()

    def refresh(self) -> None:
        self._w01, self._base = self.layers[0].pm1_table()

    def _forward_bits(self, bits: np.ndarray) -> np.ndarray:
        x = bits.astype(np.float64) @ self._w01.T
        x += self._base
        for layer in self.layers[1:]:
            x = layer.forward(x)
        return x[:, 0]

    def _forward_sigma_full(self, sigma: np.ndarray) -> np.ndarray:
        """Reference path evaluating the first layer with explicit sines."""
        x = sigma
        for layer in self.layers:
            x = layer.forward(x)
        return x[:, 0]

    def _weighted_grad_single(self, sigma: np.ndarray, w: np.ndarray) -> np.ndarray:
        grad_theta = np.zeros_like(self.theta)
        grads = SineKan._grad_views(self, grad_theta)
        caches = []
        x = sigma
        for layer in self.layers:
            x, cache = layer.forward_cached(x)
            caches.append(cache)
        g = w[:, None]
        for layer, gview, cache in zip(reversed(self.layers), reversed(grads), reversed(caches)):
            g = layer.backward(cache, g, gview)
        return grad_theta

    @staticmethod
    def _grad_views(model: "SineKan", grad_theta: np.ndarray) -> list[SineKanLayer]:
        views = []
        offset = 0
        for layer in model.layers:
            m, n, i = layer.out_dim, layer.grid_size, layer.in_dim
            a = grad_theta[offset : offset + m * n * i].reshape(m, n, i)
            offset += m * n * i
            wf = grad_theta[offset : offset + n * i].reshape(n, i)
            offset += n * i
            b = grad_theta[offset : offset + m]
            offset += m
            shell = SineKanLayer.__new__(SineKanLayer)
            shell.amplitudes, shell.frequencies, shell.bias = a, wf, b
            views.append(shell)
        return views


def init_sinekan(L: int, hidden_dims=(64, 64), grid_size: int = 8,
                 reflected: bool = False, seed: int = 0,
                 freq_init: str = "ramp_unit", delta_max: float = 0.01) -> SineKan:
    """Seeded sine-KAN: amplitudes ~ U(-a, a) with a = sqrt(6/(I*N + M)),
    biases zero, phase perturbations delta ~ (0, delta_max] stored with the
    model.  Frequencies start on a harmonic ramp scaled into (0, 1],
    w[n, l] = (n+1)/N ("ramp_unit"): the ramp spans N Fourier modes while
    keeping gradient norms small enough that learning rates in the usual
    1e-2 .. 1e-4 range sit inside Adam's stability region.  "ramp" (w = n+1) and "one" are
    available for comparison."""
    dims = list(hidden_dims)
    if not dims or dims[-1] != 1:
        dims = dims + [1]
    if grid_size < 1:
        raise ValueError("grid size must be >= 1")
    if any(d < 1 for d in dims) or L < 1:
        raise ValueError("layer dimensions must be >= 1")
    if freq_init not in ("ramp_unit", "ramp", "one"):
        raise ValueError(f"unknown frequency init {freq_init!r}")
    if not 0 < delta_max:
        raise ValueError("delta_max must be positive")
    hidden = dims[:-1]
    if grid_size * grid_size == L and any(abs(d - L) <= 0.1 * L for d in hidden):
        warnings.warn(
            f"grid size {grid_size} = sqrt(L) with hidden dims near L={L}: "
            "phase-shift alignment degrades training; use grid sqrt(L) +- 1",
            GridAnomalyWarning,
            stacklevel=2,
        )

    rng = np.random.default_rng(seed)
    total = 0
    in_dim = L
    for out_dim in dims:
        total += sinekan_layer_param_count(in_dim, out_dim, grid_size)
        in_dim = out_dim
    theta = np.zeros(total)
    deltas = []
    offset = 0
    in_dim = L
    for out_dim in dims:
        m, n = out_dim, grid_size
        scale = np.sqrt(6.0 / (in_dim * n + m))
        theta[offset : offset + m * n * in_dim] = rng.uniform(-scale, scale, m * n * in_dim)
        offset += m * n * in_dim
        if freq_init == "ramp":
            freqs = np.repeat(np.arange(1.0, n + 1.0)[:, None], in_dim, axis=1)
        elif freq_init == "ramp_unit":
            freqs = np.repeat(np.arange(1.0, n + 1.0)[:, None] / n, in_dim, axis=1)
        else:
            freqs = np.ones((n, in_dim))
        theta[offset : offset + n * in_dim] = freqs.ravel()
        offset += n * in_dim
        # biases start at zero
        offset += m
        # (1 - U[0,1)) * delta_max lies in (0, delta_max]
        deltas.append((1.0 - rng.random((n, in_dim))) * delta_max)
        in_dim = out_dim
    return SineKan(L, dims, grid_size, reflected, seed, theta, deltas,
                   freq_init=freq_init, delta_max=delta_max)


# --------------------------------------------------------------------------
# MLP model
# --------------------------------------------------------------------------


class Mlp(Ansatz):
    kind = "mlp"

    def __init__(self, L: int, dims: list[int], reflected: bool, seed: int,
                 theta: np.ndarray):
        self.L = L
        self.dims = list(dims)
        self.reflected = reflected
        self.seed = seed
        self.theta = theta
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        offset = 0
        in_dim = L
        for out_dim in dims:
            w = theta[offset : offset + out_dim * in_dim].reshape(out_dim, in_dim)
            offset += out_dim * in_dim
            b = theta[offset : offset + out_dim]
            offset += out_dim
            self.weights.append(w)
            self.biases.append(b)
            in_dim = out_dim
        assert offset == theta.size

    def _forward_bits(self, bits: np.ndarray) -> np.ndarray:
        x = bits_to_sigma(bits)
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            x = x @ w.T + b
            if k != last:
                np.maximum(x, 0.0, out=x)
        return x[:, 0]

    def _weighted_grad_single(self, sigma: np.ndarray, w_vec: np.ndarray) -> np.ndarray:
        grad_theta = np.zeros_like(self.theta)
        last = len(self.weights) - 1
        inputs, masks = [], []
        x = sigma
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            inputs.append(x)
            x = x @ w.T + b
            if k != last:
                mask = x > 0
                masks.append(mask)
                x = np.where(mask, x, 0.0)
        g = w_vec[:, None]
        offset = grad_theta.size
        for k in range(last, -1, -1):
            w = self.weights[k]
            out_dim, in_dim = w.shape
            offset -= out_dim
            grad_theta[offset : offset + out_dim] = g.sum(axis=0)
            offset -= out_dim * in_dim
            grad_theta[offset : offset + out_dim * in_dim] = (g.T @ inputs[k]).ravel()
            if k > 0:
                g = g @ w
                g = np.where(masks[k - 1], g, 0.0)
        assert offset == 0
        return grad_theta


def init_mlp(L: int, hidden_dims=(256, 256), reflected: bool = False, seed: int = 0) -> Mlp:
    """Seeded rectifier MLP with Glorot-uniform weights and zero biases."""
    dims = list(hidden_dims)
    if not dims or dims[-1] != 1:
        dims = dims + [1]
    if any(d < 1 for d in dims) or L < 1:
        raise ValueError("layer dimensions must be >= 1")
    rng = np.random.default_rng(seed)
    total = 0
    in_dim = L
    for out_dim in dims:
        total += out_dim * in_dim + out_dim
        in_dim = out_dim
    theta = np.zeros(total)
    offset = 0
    in_dim = L
    for out_dim in dims:
        scale = np.sqrt(6.0 / (in_dim + out_dim))
        theta[offset : offset + out_dim * in_dim] = rng.uniform(-scale, scale, out_dim * in_dim)
        offset += out_dim * in_dim + out_dim
        in_dim = out_dim
    return Mlp(L, dims, reflected, seed, theta)


# --------------------------------------------------------------------------
# RBM model
# --------------------------------------------------------------------------


def _log2cosh(z: np.ndarray) -> np.ndarray:
    az = np.abs(z)
    return az + np.log1p(np.exp(-2.0 * az))


class Rbm(Ansatz):
    kind = "rbm"

    def __init__(self, L: int, alpha: int, reflected: bool, seed: int, theta: np.ndarray):
        self.L = L
        self.alpha = alpha
        self.n_hidden = alpha * L
        self.reflected = reflected
        self.seed = seed
        self.theta = theta
        nh = self.n_hidden
        self.visible_bias = theta[:L]
        self.w = theta[L : L + nh * L].reshape(nh, L)
        self.hidden_bias = theta[L + nh * L :]
        assert theta.size == L + nh * L + nh

    def _forward_bits(self, bits: np.ndarray) -> np.ndarray:
        sigma = bits_to_sigma(bits)
        z = sigma @ self.w.T + self.hidden_bias
        return sigma @ self.visible_bias + _log2cosh(z).sum(axis=1)

    def _weighted_grad_single(self, sigma: np.ndarray, w_vec: np.ndarray) -> np.ndarray:
        grad_theta = np.zeros_like(self.theta)
        z = sigma @ self.w.T + self.hidden_bias
        t = np.tanh(z)
        L, nh = self.L, self.n_hidden
        grad_theta[:L] = w_vec @ sigma
        wt = t * w_vec[:, None]
        grad_theta[L : L + nh * L] = (wt.T @ sigma).ravel()
        grad_theta[L + nh * L :] = wt.sum(axis=0)
        return grad_theta


def init_rbm(L: int, alpha: int = 128, reflected: bool = False, seed: int = 0) -> Rbm:
    """Seeded real-parameter RBM with alpha hidden units per site."""
    if alpha < 1 or L < 1:
        raise ValueError("alpha and L must be >= 1")
    rng = np.random.default_rng(seed)
    nh = alpha * L
    theta = 0.01 * rng.standard_normal(L + nh * L + nh)
    return Rbm(L, alpha, reflected, seed, theta)


# --------------------------------------------------------------------------
# factory
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelSpec:
    """Construction recipe for any ansatz kind (used by config and checkpoints)."""

    kind: str
    L: int
    hidden_dims: tuple[int, ...] = ()
    grid_size: int = 8
    alpha: int = 128
    reflected: bool = False
    seed: int = 0
    freq_init: str = "ramp_unit"
    delta_max: float = 0.01


def build_model(spec: ModelSpec) -> Ansatz:
    if spec.kind == "sinekan":
        return init_sinekan(spec.L, spec.hidden_dims or (64, 64), spec.grid_size,
                            spec.reflected, spec.seed, spec.freq_init, spec.delta_max)
    if spec.kind == "mlp":
        return init_mlp(spec.L, spec.hidden_dims or (256, 256), spec.reflected, spec.seed)
    if spec.kind == "rbm":
        return init_rbm(spec.L, spec.alpha, spec.reflected, spec.seed)
    raise ValueError(f"unknown ansatz kind {spec.kind!r}")
