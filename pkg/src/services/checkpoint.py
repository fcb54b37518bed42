"""Flat little-endian parameter dumps with a JSON manifest."""

import hashlib
import json
import logging
from pathlib import Path
from typing import Dict, Union

import numpy as np

from src.models.parameters import ParameterStore
from src.utils.errors import ChecksumError, DataError

logger = logging.getLogger(__name__)

PARAMS_FILE = "params.bin"
MANIFEST_FILE = "params_manifest.json"
DUMP_DTYPE = "<f8"


def dump_parameters(params: ParameterStore, directory: Union[str, Path]) -> Path:
    """Write every tensor, in store order, as one contiguous ``<f8`` blob plus its manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    chunks = []
    offset = 0
    for name, tensor in params.items():
        flat = np.ascontiguousarray(tensor.data, dtype=DUMP_DTYPE).reshape(-1)
        entries.append({"name": name, "shape": list(tensor.shape), "offset": offset, "count": int(flat.size)})
        chunks.append(flat.tobytes())
        offset += int(flat.size)
    blob = b"".join(chunks)

    (directory / PARAMS_FILE).write_bytes(blob)
    manifest = {
        "dtype": DUMP_DTYPE,
        "num_values": offset,
        "sha256": hashlib.sha256(blob).hexdigest(),
        "tensors": entries,
    }
    (directory / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    logger.info(f"Saved {len(entries)} parameter tensors ({offset} values) to {directory / PARAMS_FILE}")
    return directory / PARAMS_FILE


def load_parameters(directory: Union[str, Path]) -> ParameterStore:
    """Read a dump written by ``dump_parameters``; any byte-level corruption raises ChecksumError."""
    directory = Path(directory)
    blob_path, manifest_path = directory / PARAMS_FILE, directory / MANIFEST_FILE
    for path in (blob_path, manifest_path):
        if not path.exists():
            raise DataError("parameter dump not found", str(path))
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ChecksumError(f"unreadable manifest: {e}", str(manifest_path)) from None

    blob = blob_path.read_bytes()
    digest = hashlib.sha256(blob).hexdigest()
    if digest != manifest.get("sha256"):
        logger.error(f"Checksum mismatch for {blob_path}: expected {manifest.get('sha256')}, got {digest}")
        raise ChecksumError("checksum does not match the manifest", str(blob_path))

    values = np.frombuffer(blob, dtype=manifest.get("dtype", DUMP_DTYPE))
    if values.size != manifest.get("num_values"):
        raise ChecksumError(f"expected {manifest.get('num_values')} values, found {values.size}", str(blob_path))
    arrays: Dict[str, np.ndarray] = {}
    for entry in manifest["tensors"]:
        start, count = entry["offset"], entry["count"]
        arrays[entry["name"]] = values[start:start + count].astype(np.float64).reshape(entry["shape"])
    logger.info(f"Loaded {len(arrays)} parameter tensors from {blob_path}")
    return ParameterStore(arrays)
