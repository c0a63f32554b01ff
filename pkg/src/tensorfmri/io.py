"""Dataset manifests, chain files and the dataset content hash.

Dataset directory::

    manifest.json            format/version, shapes, blob names, truth, config echo
    covariate.f64            T little-endian float64 values
    y_s{i}_r{g}.f64          one blob per (subject, region): T x prod(dims),
                             time-major, voxels in C order (last mode fastest)
    truth_*.f64              optional truth record

Chain file (``*.tfc``)::

    8 bytes   magic b"TFCHAIN1"
    8 bytes   little-endian uint64 header length L
    L bytes   UTF-8 JSON header (metadata and the array table)
    ...       arrays in table order, little-endian float64, C order

Per-sweep wall-clock times live in a ``*.timing.json`` sidecar so that the
chain file itself is a pure function of seed, config and data.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
from pathlib import Path

import numpy as np

from .engine import ChainStore
from .simulate import Dataset, Truth

DATASET_FORMAT = "tensorfmri-dataset"
DATASET_VERSION = "1.0"
CHAIN_MAGIC = b"TFCHAIN1"
CHAIN_VERSION = "1.0"
LE_F64 = np.dtype("<f8")


class FormatError(ValueError):
    pass


def _write_blob(path: Path, array: np.ndarray):
    path.write_bytes(np.ascontiguousarray(array, dtype=LE_F64).tobytes())


def _read_blob(path: Path, shape) -> np.ndarray:
    raw = path.read_bytes()
    expected = 8 * int(np.prod(shape, dtype=np.int64))
    if len(raw) != expected:
        raise FormatError(f"{path.name}: {len(raw)} bytes, expected {expected}")
    return np.frombuffer(raw, dtype=LE_F64).astype(np.float64).reshape(shape)


def dataset_hash(dataset: Dataset) -> str:
    """SHA-256 over shapes, covariate and every response series (truth excluded)."""
    h = hashlib.sha256()
    h.update(json.dumps({"n": dataset.n_subjects, "T": dataset.n_time, "dims": dataset.dims}).encode())
    h.update(np.ascontiguousarray(dataset.covariate, dtype=LE_F64).tobytes())
    for y in dataset.responses:
        h.update(np.ascontiguousarray(y, dtype=LE_F64).tobytes())
    return h.hexdigest()


def write_dataset(dataset: Dataset, out_dir, config: dict | None = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n, t = dataset.n_subjects, dataset.n_time
    _write_blob(out / "covariate.f64", dataset.covariate)
    responses = []
    for i in range(n):
        row = []
        for g, y in enumerate(dataset.responses):
            name = f"y_s{i:03d}_r{g:02d}.f64"
            _write_blob(out / name, y[i].reshape(t, -1))
            row.append(name)
        responses.append(row)
    truth = None
    if dataset.truth is not None:
        tr = dataset.truth
        coef_names = []
        for g, b in enumerate(tr.coefficients):
            name = f"truth_coef_r{g:02d}.f64"
            _write_blob(out / name, b)
            coef_names.append(name)
        for key, arr in (("effects", tr.effects), ("covariance", tr.covariance), ("precision", tr.precision)):
            _write_blob(out / f"truth_{key}.f64", arr)
        truth = {
            "coefficients": coef_names,
            "effects": "truth_effects.f64",
            "covariance": "truth_covariance.f64",
            "precision": "truth_precision.f64",
        }
    manifest = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "n_subjects": n,
        "n_time": t,
        "n_regions": dataset.n_regions,
        "ndim": dataset.ndim,
        "dims": [list(d) for d in dataset.dims],
        "layout": "little-endian float64; time-major, voxels in C order (last mode fastest)",
        "covariate": "covariate.f64",
        "responses": responses,
        "truth": truth,
        "dataset_hash": dataset_hash(dataset),
        "config": config or {},
        "meta": dataset.meta,
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def read_manifest(path) -> tuple[dict, Path]:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    if not path.exists():
        raise FormatError(f"no dataset manifest at {path}")
    manifest = json.loads(path.read_text())
    if manifest.get("format") != DATASET_FORMAT or "version" not in manifest:
        raise FormatError(f"{path} is not a {DATASET_FORMAT} manifest")
    return manifest, path.parent


def read_dataset(path) -> Dataset:
    manifest, root = read_manifest(path)
    n, t = manifest["n_subjects"], manifest["n_time"]
    dims = [tuple(d) for d in manifest["dims"]]
    if len(manifest["responses"]) != n or any(len(r) != len(dims) for r in manifest["responses"]):
        raise FormatError("response table does not match n_subjects x n_regions")
    x = _read_blob(root / manifest["covariate"], (t,))
    responses = []
    for g, d in enumerate(dims):
        y = np.empty((n, t) + d)
        for i in range(n):
            y[i] = _read_blob(root / manifest["responses"][i][g], (t,) + d)
        responses.append(y)
    truth = None
    if manifest.get("truth"):
        tr = manifest["truth"]
        size = len(dims)
        truth = Truth(
            coefficients=[_read_blob(root / name, d) for name, d in zip(tr["coefficients"], dims)],
            effects=_read_blob(root / tr["effects"], (n, size)),
            covariance=_read_blob(root / tr["covariance"], (size, size)),
            precision=_read_blob(root / tr["precision"], (size, size)),
        )
    dataset = Dataset(responses=responses, covariate=x, truth=truth, meta=manifest.get("meta", {}))
    stored = manifest.get("dataset_hash")
    if stored is not None and stored != dataset_hash(dataset):
        raise FormatError("dataset content does not match the manifest hash")
    return dataset


def _chain_arrays(store: ChainStore) -> list[tuple[str, np.ndarray]]:
    k = store.n_records
    arrays = [(f"margins_{g:02d}", m[:k]) for g, m in enumerate(store.margins)]
    arrays += [(name, getattr(store, name)[:k]) for name in ChainStore.ARRAYS]
    return arrays


def write_chain(store: ChainStore, path, dataset_digest: str | None = None) -> Path:
    path = Path(path)
    arrays = _chain_arrays(store)
    header = {
        "format": "tensorfmri-chain",
        "version": CHAIN_VERSION,
        "meta": store.meta,
        "n_records": store.n_records,
        "n_subjects": int(store.effects.shape[1]),
        "dataset_hash": dataset_digest,
        "arrays": [{"name": name, "shape": list(a.shape), "dtype": "<f8"} for name, a in arrays],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(CHAIN_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype=LE_F64).tobytes())
    os.replace(tmp, path)
    timing = {"sweep_seconds": [float(v) for v in store.sweep_seconds[: store.n_records]]}
    Path(str(path) + ".timing.json").write_text(json.dumps(timing) + "\n")
    return path


def read_chain_header(path) -> dict:
    with open(path, "rb") as fh:
        if fh.read(8) != CHAIN_MAGIC:
            raise FormatError(f"{path} is not a chain file")
        (length,) = struct.unpack("<Q", fh.read(8))
        return json.loads(fh.read(length).decode())


def read_chain(path) -> tuple[ChainStore, dict]:
    """Load a chain file; returns the store and its header."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[:8] != CHAIN_MAGIC:
        raise FormatError(f"{path} is not a chain file")
    (length,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16 : 16 + length].decode())
    meta = header["meta"]
    n_regions = len(meta["dims"])
    store = ChainStore(meta, header["n_subjects"], n_regions)
    offset = 16 + length
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        size = 8 * int(np.prod(shape, dtype=np.int64))
        if offset + size > len(raw):
            raise FormatError(f"{path}: truncated array {entry['name']}")
        arr = np.frombuffer(raw[offset : offset + size], dtype=LE_F64).astype(np.float64).reshape(shape)
        offset += size
        name = entry["name"]
        if name.startswith("margins_"):
            store.margins[int(name.split("_")[1])][: shape[0]] = arr
        else:
            getattr(store, name)[: shape[0]] = arr
    if offset != len(raw):
        raise FormatError(f"{path}: trailing bytes after the array table")
    store.n_records = header["n_records"]
    timing = Path(str(path) + ".timing.json")
    if timing.exists():
        seconds = json.loads(timing.read_text())["sweep_seconds"]
        store.sweep_seconds[: len(seconds)] = seconds
    return store, header
