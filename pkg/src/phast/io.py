"""File formats: PHDS datasets, JSON checkpoints, JSON-lines histories and CSV tables.

Floats cross file boundaries losslessly: raw little-endian float64 in PHDS
files and 17-significant-digit decimals in JSON and CSV.
"""

from __future__ import annotations

import csv
import io as _io
import json
import math
import os
import struct
from pathlib import Path

import numpy as np

from .envs import Dataset, EnvSpec, Split, get_env
from .errors import ConfigError, ContractViolation

__all__ = [
    "PHDS_MAGIC",
    "PHDS_VERSION",
    "write_phds",
    "read_phds",
    "save_dataset",
    "load_dataset",
    "dumps",
    "write_json",
    "read_json",
    "append_jsonl",
    "write_jsonl",
    "read_jsonl",
    "save_checkpoint",
    "load_checkpoint",
    "write_csv",
    "read_csv",
]

PHDS_MAGIC = b"PHDS"
PHDS_VERSION = 1


def _check_writable(path: Path, force: bool) -> None:
    if path.exists() and not force:
        raise FileExistsError(f"{path} exists; pass --force to overwrite")


def write_phds(path, env_name: str, dt: float, q: np.ndarray, p: np.ndarray, force: bool = False) -> None:
    """Header, then per trajectory a row-major (T, n) block of q followed by p."""
    path = Path(path)
    _check_writable(path, force)
    q = np.ascontiguousarray(q, dtype="<f8")
    p = np.ascontiguousarray(p, dtype="<f8")
    if q.shape != p.shape or q.ndim != 3:
        raise ContractViolation(f"q and p must share a (N, T, n) shape, got {q.shape} and {p.shape}")
    N, T, n = q.shape
    name = env_name.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(PHDS_MAGIC)
        fh.write(struct.pack("<I", PHDS_VERSION))
        fh.write(struct.pack("<I", len(name)))
        fh.write(name)
        fh.write(struct.pack("<III", n, T, N))
        fh.write(struct.pack("<d", float(dt)))
        for i in range(N):
            fh.write(q[i].tobytes())
            fh.write(p[i].tobytes())


def read_phds(path):
    """Returns (env_name, dt, q, p)."""
    data = Path(path).read_bytes()
    if data[:4] != PHDS_MAGIC:
        raise ContractViolation(f"{path} is not a PHDS file")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != PHDS_VERSION:
        raise ContractViolation(f"unsupported PHDS version {version}")
    (length,) = struct.unpack_from("<I", data, 8)
    off = 12
    name = data[off:off + length].decode("utf-8")
    off += length
    n, T, N = struct.unpack_from("<III", data, off)
    off += 12
    (dt,) = struct.unpack_from("<d", data, off)
    off += 8
    body = np.frombuffer(data, dtype="<f8", count=N * 2 * T * n, offset=off)
    if off + body.nbytes != len(data):
        raise ContractViolation(f"{path} has trailing or missing bytes")
    blocks = body.reshape(N, 2, T, n)
    return name, dt, blocks[:, 0].astype(float), blocks[:, 1].astype(float)


def save_dataset(ds: Dataset, directory, force: bool = False) -> list:
    """One PHDS file and one JSON sidecar per split."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for split, data in ds.splits.items():
        path = directory / f"{split}.phds"
        sidecar = directory / f"{split}.json"
        _check_writable(sidecar, force)
        write_phds(path, ds.env.name, ds.env.dt, data.q, data.p, force=force)
        write_json(sidecar, {"env": ds.env.snapshot(), "seed": ds.seed, "split": split,
                             "n_trajectories": len(data), "format": "PHDS", "version": PHDS_VERSION})
        written += [path, sidecar]
    return written


def load_dataset(directory, splits=("train", "val", "test")) -> Dataset:
    directory = Path(directory)
    env, seed, out = None, None, {}
    for split in splits:
        path = directory / f"{split}.phds"
        if not path.exists():
            continue
        name, dt, q, p = read_phds(path)
        meta = read_json(directory / f"{split}.json")
        snap = meta["env"]
        env_here = get_env(name, **{k: (tuple(v) if isinstance(v, list) else v)
                                    for k, v in snap["constants"].items()})
        if env is not None and env_here.name != env.name:
            raise ContractViolation("splits from different environments")
        if abs(dt - env_here.dt) > 0:
            raise ContractViolation(f"{path} dt {dt} differs from the environment dt {env_here.dt}")
        env, seed = env_here, meta["seed"]
        out[split] = Split(q, p)
    if env is None:
        raise FileNotFoundError(f"no PHDS splits in {directory}")
    return Dataset(env, seed, out)


# ---------------------------------------------------------------------------
# JSON with 17-significant-digit floats
# ---------------------------------------------------------------------------


def _fmt_float(x: float) -> str:
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    s = format(x, ".17g")
    if "e" not in s and "." not in s and "n" not in s:
        s += ".0"
    return s


def _encode(obj, indent, level):
    pad = "" if indent is None else "\n" + " " * (indent * (level + 1))
    end = "" if indent is None else "\n" + " " * (indent * level)
    sep = ", " if indent is None else ","
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(float(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        return _encode(obj.tolist(), indent, level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [pad + json.dumps(str(k)) + ": " + _encode(v, indent, level + 1) for k, v in obj.items()]
        return "{" + sep.join(items) + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(isinstance(v, (int, float, np.integer, np.floating)) and not isinstance(v, bool) for v in obj):
            return "[" + ", ".join(_encode(v, None, 0) for v in obj) + "]"
        items = [pad + _encode(v, indent, level + 1) for v in obj]
        return "[" + sep.join(items) + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj, indent: int | None = 1) -> str:
    return _encode(obj, indent, 0)


def write_json(path, obj, indent: int | None = 1) -> None:
    Path(path).write_text(dumps(obj, indent) + "\n", encoding="utf-8")


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def append_jsonl(path, record) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(dumps(record, None) + "\n")


def write_jsonl(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(dumps(r, None) + "\n")


def read_jsonl(path) -> list:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def _arrays(d: dict) -> dict:
    return {k: {"shape": list(np.shape(v)), "values": np.asarray(v, dtype=float).ravel().tolist()}
            for k, v in d.items()}


def _unarrays(d: dict) -> dict:
    return {k: np.asarray(v["values"], dtype=float).reshape(v["shape"]) for k, v in d.items()}


def save_checkpoint(path, *, params: dict, trainable: dict, meta: dict, resume: dict | None = None) -> None:
    """``params`` holds the selected (best-validation) values; ``resume`` the latest training state."""
    obj = {"format": "phast-checkpoint", "version": 1, "meta": meta, "trainable": trainable,
           "params": _arrays(params)}
    if resume is not None:
        obj["resume"] = {
            "epoch": resume["epoch"],
            "params": _arrays(resume["params"]),
            "optimizer": {"t": resume["optimizer"]["t"], "m": _arrays(resume["optimizer"]["m"]),
                          "v": _arrays(resume["optimizer"]["v"])},
            "best": None if resume["best"] is None else {
                "val": resume["best"][0], "epoch": resume["best"][1], "params": _arrays(resume["best"][2])},
            "evaluations": [list(e) for e in resume["evaluations"]],
            "history": resume["history"],
        }
    write_json(path, obj)


def load_checkpoint(path) -> dict:
    obj = read_json(path)
    if obj.get("format") != "phast-checkpoint":
        raise ConfigError(f"{path} is not a checkpoint")
    out = {"meta": obj["meta"], "trainable": obj["trainable"], "params": _unarrays(obj["params"])}
    r = obj.get("resume")
    if r is not None:
        out["resume"] = {
            "epoch": r["epoch"],
            "params": _unarrays(r["params"]),
            "optimizer": {"t": r["optimizer"]["t"], "m": _unarrays(r["optimizer"]["m"]),
                          "v": _unarrays(r["optimizer"]["v"])},
            "best": None if r["best"] is None else (r["best"]["val"], r["best"]["epoch"],
                                                    _unarrays(r["best"]["params"])),
            "evaluations": [tuple(e) for e in r["evaluations"]],
            "history": r["history"],
        }
    return out


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return _fmt_float(float(v))
    return str(v)


def write_csv(path, rows, columns) -> None:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(r.get(c)) for c in columns])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def read_csv(path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def env_out_dir() -> Path | None:
    v = os.environ.get("PHAST_OUT_DIR")
    return Path(v) if v else None
