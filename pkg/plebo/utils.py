import json
import hashlib
import psutil
import numpy as np
from pathlib import Path
from typing import Any
from loguru import logger


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    """
    Build an independent generator for a sub-stream identified by ``keys``.

    The same (seed, keys) always yields the same stream, whichever order or
    thread the caller runs in.
    """
    return np.random.default_rng([int(seed), *(int(k) for k in keys)])


def spawn_seeds(seed: int, n: int) -> list[int]:
    """Derive ``n`` independent 64-bit seeds from ``seed``."""
    children = np.random.SeedSequence(int(seed)).spawn(n)
    return [int(child.generate_state(1, dtype=np.uint64)[0]) for child in children]


def compute_file_hash(file_path: Path, hash_algo: str = "sha256") -> str:
    """Compute the hash of a file."""
    hash_func = getattr(hashlib, hash_algo)()
    with open(file_path, "rb") as f:
        for chunk in iter(lambda: f.read(4096), b""):
            hash_func.update(chunk)
    return hash_func.hexdigest()


def write_json(path: Path, payload: Any) -> Path:
    """Write ``payload`` as indented JSON, creating parent directories."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=False)
        f.write("\n")
    logger.debug(f"[write_json] wrote {path}")
    return path


def read_json(path: Path) -> Any:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def available_jobs(requested: int = 0) -> int:
    """Number of worker threads to use; 0 or less means all available cores."""
    if requested and requested > 0:
        return requested
    return psutil.cpu_count(logical=True) or 1
