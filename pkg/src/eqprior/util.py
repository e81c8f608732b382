"""Seeding, hashing and output-metadata helpers."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np


def _key128(seed: int, labels: tuple) -> int:
    blob = json.dumps([seed, *map(str, labels)]).encode()
    return int.from_bytes(hashlib.sha256(blob).digest()[:16], "little")


def rng_for(seed: int, *labels) -> np.random.Generator:
    """Counter-based (Philox) stream keyed on seed plus task labels.

    Every random draw in the package flows through here, so parallel and
    serial executions of the same run agree bit for bit.
    """
    return np.random.Generator(np.random.Philox(key=_key128(seed, labels)))


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True, default=str).encode()).hexdigest()[:12]


def run_metadata(config: dict, *, seed: int | None = None,
                 corpus_hash: str | None = None) -> dict:
    from . import __version__

    meta = {"tool": "eqprior", "version": __version__, "config_hash": config_hash(config)}
    if seed is not None:
        meta["seed"] = seed
    if corpus_hash is not None:
        meta["corpus_hash"] = corpus_hash
    return meta
