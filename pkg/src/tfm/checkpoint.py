"""Versioned binary checkpoint container.

Layout: magic ``TFM1``; uint32 array count; per array a manifest entry
(uint32 name length, UTF-8 name, uint8 dtype tag, uint8 rank, uint32 dims);
the raw row-major little-endian float64 payloads in manifest order; finally a
length-prefixed JSON model-config record. Round trips are bit-exact.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from . import baseline_fm, data, nets

Array = np.ndarray

MAGIC = b"TFM1"
_DTYPE_F64 = 0


class CheckpointError(ValueError):
    """Malformed checkpoint; carries the byte offset of the failure."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError(f"truncated while reading {what}", self.pos)
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def u8(self, what: str) -> int:
        return self.take(1, what)[0]


def save_arrays(path, arrays: dict[str, Array], config: dict) -> None:
    names = sorted(arrays)
    parts = [MAGIC, struct.pack("<I", len(names))]
    for name in names:
        arr = np.ascontiguousarray(arrays[name], dtype="<f8")
        nb = name.encode("utf-8")
        parts.append(struct.pack("<I", len(nb)))
        parts.append(nb)
        parts.append(struct.pack("<BB", _DTYPE_F64, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
    for name in names:
        parts.append(np.ascontiguousarray(arrays[name], dtype="<f8").tobytes())
    cfg = json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts.append(struct.pack("<I", len(cfg)))
    parts.append(cfg)
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_arrays(path) -> tuple[dict[str, Array], dict]:
    with open(path, "rb") as fh:
        rd = _Reader(fh.read())
    if rd.take(4, "magic") != MAGIC:
        raise CheckpointError("bad magic; not a TFM1 checkpoint", 0)
    count = rd.u32("array count")
    manifest: list[tuple[str, tuple[int, ...]]] = []
    for _ in range(count):
        name = rd.take(rd.u32("name length"), "name").decode("utf-8")
        tag = rd.u8("dtype tag")
        if tag != _DTYPE_F64:
            raise CheckpointError(f"unsupported dtype tag {tag}", rd.pos - 1)
        rank = rd.u8("rank")
        dims = struct.unpack(f"<{rank}I", rd.take(4 * rank, "dims"))
        manifest.append((name, dims))
    arrays: dict[str, Array] = {}
    for name, dims in manifest:
        n = int(np.prod(dims)) if dims else 1
        raw = rd.take(8 * n, f"payload of {name!r}")
        arrays[name] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(dims)
    cfg_raw = rd.take(rd.u32("config length"), "config record")
    try:
        config = json.loads(cfg_raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable config record: {exc}", rd.pos - len(cfg_raw)) from exc
    if rd.pos != len(rd.blob):
        raise CheckpointError("trailing bytes after config record", rd.pos)
    return arrays, config


def _source_dict(source: data.SourceSpec) -> dict:
    return {"kind": source.kind.value, "radius": source.radius, "width": source.width}


def _source_from(record: dict) -> data.SourceSpec:
    return data.SourceSpec(data.SourceKind(record["kind"]), record["radius"], record["width"])


def save_model(path, model, source: data.SourceSpec | None = None, extra: dict | None = None) -> None:
    """Persist a transition-flow or velocity model plus the context needed to sample it."""
    if isinstance(model, nets.TfmModel):
        record = {
            "kind": "TFM",
            "cond_mode": model.cond_mode.value,
            "param_mode": model.param_mode.value,
        }
    elif isinstance(model, baseline_fm.FmModel):
        record = {"kind": "FM"}
    else:
        raise TypeError(f"cannot checkpoint {type(model).__name__}")
    record.update(
        {
            "format_version": 1,
            "data_dim": model.data_dim,
            "hidden_sizes": list(model.hidden_sizes),
            "time_dim": model.time_cfg.dim,
            "max_period": model.time_cfg.max_period,
            "n_classes": model.n_classes,
            "source": _source_dict(source if source is not None else data.SourceSpec()),
        }
    )
    if extra:
        record["extra"] = extra
    save_arrays(path, model.params, record)


def load_model(path):
    """Rebuild the model; returns (model, source_spec, extra_record)."""
    arrays, record = load_arrays(path)
    time_cfg = nets.TimeEmbedConfig(record["time_dim"], record["max_period"])
    common = dict(
        params=arrays,
        data_dim=record["data_dim"],
        hidden_sizes=tuple(record["hidden_sizes"]),
        time_cfg=time_cfg,
        n_classes=record["n_classes"],
    )
    if record["kind"] == "TFM":
        model = nets.TfmModel(
            cond_mode=nets.ConditioningMode(record["cond_mode"]),
            param_mode=nets.ParamMode(record["param_mode"]),
            **common,
        )
    elif record["kind"] == "FM":
        model = baseline_fm.FmModel(**common)
    else:
        raise CheckpointError(f"unknown model kind {record['kind']!r}", 0)
    return model, _source_from(record["source"]), record.get("extra", {})
