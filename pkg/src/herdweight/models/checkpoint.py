"""Checkpoint files: a plain-text header describing kind, config, and the
array manifest, followed by one contiguous little-endian float64 payload.

load(save(model)) restores every parameter and buffer bit-exactly; loading
into an existing model enforces config equality.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..errors import CheckpointError

FORMAT_LINE = "herdweight-checkpoint 1"


def _format_value(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


def save_checkpoint(model, path: str | Path, meta: dict | None = None) -> None:
    arrays: list[tuple[str, str, np.ndarray]] = []
    for name, p in model.store.params.items():
        arrays.append(("param", name, p.data))
    for name, buf in model.store.buffers.items():
        arrays.append(("buffer", name, buf))

    lines = [FORMAT_LINE, f"kind {model.kind}", f"seed {model.seed}"]
    for key, value in sorted(model.config_values().items()):
        lines.append(f"config {key} {_format_value(value)}")
    for key, value in sorted((meta or {}).items()):
        lines.append(f"meta {key} {value}")
    offset = 0
    for kind, name, arr in arrays:
        shape = ",".join(str(d) for d in arr.shape) or "0"
        lines.append(f"{kind} {name} {shape} {offset}")
        offset += arr.size
    lines.append("end")

    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("utf-8"))
        for _, _, arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _parse_header(fh) -> tuple[dict, list[tuple[str, str, tuple[int, ...], int]]]:
    first = fh.readline().decode("utf-8").rstrip("\n")
    if first != FORMAT_LINE:
        raise CheckpointError(f"unsupported checkpoint format: {first!r}")
    info: dict = {"config": {}, "meta": {}}
    manifest = []
    while True:
        raw = fh.readline()
        if not raw:
            raise CheckpointError("truncated checkpoint header")
        line = raw.decode("utf-8").rstrip("\n")
        if line == "end":
            break
        fields = line.split(" ")
        tag = fields[0]
        if tag in ("kind", "seed"):
            info[tag] = fields[1]
        elif tag in ("config", "meta"):
            info[tag][fields[1]] = " ".join(fields[2:])
        elif tag in ("param", "buffer"):
            name, shape_s, offset_s = fields[1], fields[2], fields[3]
            shape = tuple(int(d) for d in shape_s.split(",")) if shape_s != "0" else ()
            manifest.append((tag, name, shape, int(offset_s)))
        else:
            raise CheckpointError(f"unknown checkpoint header line: {line!r}")
    return info, manifest


def _coerce_config(raw: dict) -> dict:
    out = {}
    for key, text in raw.items():
        if text in ("True", "False"):
            out[key] = text == "True"
        else:
            try:
                out[key] = int(text)
            except ValueError:
                out[key] = float(text)
    return out


def read_checkpoint_info(path: str | Path) -> dict:
    with open(path, "rb") as fh:
        info, _ = _parse_header(fh)
    info["config"] = _coerce_config(info["config"])
    return info


def load_checkpoint(path: str | Path):
    """Rebuild the model described by the checkpoint and fill its arrays."""
    from . import build_model

    with open(path, "rb") as fh:
        info, manifest = _parse_header(fh)
        payload = np.frombuffer(fh.read(), dtype="<f8")
    config = _coerce_config(info["config"])
    model = build_model(info["kind"], config, int(info["seed"]))
    _fill(model, manifest, payload, path)
    return model


def load_into(model, path: str | Path) -> None:
    """Fill an existing model's arrays; kind and config must match."""
    with open(path, "rb") as fh:
        info, manifest = _parse_header(fh)
        payload = np.frombuffer(fh.read(), dtype="<f8")
    if info["kind"] != model.kind:
        raise CheckpointError(f"checkpoint kind {info['kind']!r} does not match "
                              f"model kind {model.kind!r}")
    if _coerce_config(info["config"]) != model.config_values():
        raise CheckpointError(
            f"checkpoint config {info['config']} does not match model config "
            f"{model.config_values()}")
    _fill(model, manifest, payload, path)


def _fill(model, manifest, payload, path) -> None:
    store = model.store
    seen_params = set()
    new_buffers: dict[str, np.ndarray] = {}
    for kind, name, shape, offset in manifest:
        size = int(np.prod(shape)) if shape else 1
        arr = payload[offset:offset + size].reshape(shape).astype(np.float64)
        if kind == "param":
            if name not in store.params:
                raise CheckpointError(f"checkpoint parameter {name!r} not in model "
                                      f"(file {path})")
            if store.params[name].data.shape != arr.shape:
                raise CheckpointError(f"shape mismatch for {name!r}: "
                                      f"{store.params[name].data.shape} vs {arr.shape}")
            store.params[name].data = arr.copy()
            seen_params.add(name)
        else:
            new_buffers[name] = arr.copy()
    missing = set(store.params) - seen_params
    if missing:
        raise CheckpointError(f"checkpoint missing parameters: {sorted(missing)}")
    store.buffers = new_buffers
