"""Bit-exact model checkpoints.

Layout:

    KANVMC1\\n                    magic
    key: value\\n ...             UTF-8 header, one field per line
    \\n                           blank line ends the header
    <delta bytes><theta bytes>   little-endian float64 payload

The header declares the model recipe (kind, L, dims, grid, reflected, seed,
layout version) and the payload lengths, so a load reconstructs the exact
model: frozen phase perturbations first, then the flat parameter vector in
layout order.  Any mismatch (magic, layout version, byte count) fails
loudly without producing a partial model.
"""

from __future__ import annotations

import os
import tempfile

import numpy as np

from .ansatz import LAYOUT_VERSION, Ansatz, Mlp, Rbm, SineKan, sinekan_layer_param_count

MAGIC = b"KANVMC1\n"


class CheckpointError(ValueError):
    pass


def _header_fields(model: Ansatz) -> dict[str, str]:
    fields = {
        "layout": str(LAYOUT_VERSION),
        "kind": model.kind,
        "L": str(model.L),
        "reflected": "1" if model.reflected else "0",
        "seed": str(model.seed),
    }
    if isinstance(model, SineKan):
        fields["hidden"] = ",".join(str(d) for d in model.dims)
        fields["grid"] = str(model.grid_size)
        fields["freq_init"] = model.freq_init
        fields["delta_max"] = repr(model.delta_max)
        fields["delta_count"] = str(sum(l.delta.size for l in model.layers))
    elif isinstance(model, Mlp):
        fields["hidden"] = ",".join(str(d) for d in model.dims)
        fields["delta_count"] = "0"
    elif isinstance(model, Rbm):
        fields["alpha"] = str(model.alpha)
        fields["delta_count"] = "0"
    else:
        raise CheckpointError(f"cannot checkpoint a {type(model).__name__}")
    fields["theta_count"] = str(model.param_count())
    return fields


def checkpoint_save(path: str, model: Ansatz) -> None:
    """Write the model atomically (temp file + rename)."""
    fields = _header_fields(model)
    header = MAGIC + "".join(f"{k}: {v}\n" for k, v in fields.items()).encode() + b"\n"
    if isinstance(model, SineKan):
        delta = np.concatenate([l.delta.ravel() for l in model.layers])
    else:
        delta = np.empty(0)
    payload = delta.astype("<f8").tobytes() + model.theta.astype("<f8").tobytes()
    out_dir = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=out_dir, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(header + payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _parse_header(blob: bytes) -> tuple[dict[str, str], int]:
    if not blob.startswith(MAGIC):
        raise CheckpointError("not a KANVMC1 checkpoint (bad magic)")
    end = blob.find(b"\n\n", len(MAGIC))
    if end < 0:
        raise CheckpointError("unterminated checkpoint header")
    fields = {}
    for line in blob[len(MAGIC) : end].decode("utf-8").splitlines():
        key, sep, value = line.partition(": ")
        if not sep:
            raise CheckpointError(f"malformed header line {line!r}")
        fields[key] = value
    return fields, end + 2


def checkpoint_load(path: str) -> Ansatz:
    """Reconstruct the exact model saved by checkpoint_save."""
    with open(path, "rb") as f:
        blob = f.read()
    fields, offset = _parse_header(blob)
    try:
        layout = int(fields["layout"])
        kind = fields["kind"]
        L = int(fields["L"])
        reflected = fields["reflected"] == "1"
        seed = int(fields["seed"])
        delta_count = int(fields["delta_count"])
        theta_count = int(fields["theta_count"])
    except KeyError as exc:
        raise CheckpointError(f"missing header field {exc}") from exc
    if layout != LAYOUT_VERSION:
        raise CheckpointError(
            f"layout version {layout} not supported (this build reads {LAYOUT_VERSION})"
        )

    expected = offset + 8 * (delta_count + theta_count)
    if len(blob) != expected:
        raise CheckpointError(
            f"payload is {len(blob) - offset} bytes, header declares {expected - offset}"
        )
    delta = np.frombuffer(blob, dtype="<f8", count=delta_count, offset=offset).astype(np.float64)
    theta = np.frombuffer(
        blob, dtype="<f8", count=theta_count, offset=offset + 8 * delta_count
    ).astype(np.float64)

    if kind == "sinekan":
        dims = [int(x) for x in fields["hidden"].split(",")]
        grid = int(fields["grid"])
        deltas = []
        pos = 0
        in_dim = L
        n_params = 0
        for out_dim in dims:
            deltas.append(delta[pos : pos + grid * in_dim].reshape(grid, in_dim).copy())
            pos += grid * in_dim
            n_params += sinekan_layer_param_count(in_dim, out_dim, grid)
            in_dim = out_dim
        if pos != delta_count or n_params != theta_count:
            raise CheckpointError("header dims do not match the payload sizes")
        return SineKan(
            L, dims, grid, reflected, seed, theta.copy(), deltas,
            freq_init=fields.get("freq_init", "ramp_unit"),
            delta_max=float(fields.get("delta_max", "0.01")),
        )
    if kind == "mlp":
        dims = [int(x) for x in fields["hidden"].split(",")]
        n_params = 0
        in_dim = L
        for out_dim in dims:
            n_params += out_dim * in_dim + out_dim
            in_dim = out_dim
        if n_params != theta_count or delta_count != 0:
            raise CheckpointError("header dims do not match the payload sizes")
        return Mlp(L, dims, reflected, seed, theta.copy())
    if kind == "rbm":
        alpha = int(fields["alpha"])
        if L + alpha * L * L + alpha * L != theta_count or delta_count != 0:
            raise CheckpointError("header dims do not match the payload sizes")
        return Rbm(L, alpha, reflected, seed, theta.copy())
    raise CheckpointError(f"unknown model kind {kind!r}")
