"""On-disk cache of integrated window pmfs."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path

import numpy as np

CACHE_ENV = "PRIVMAP_CACHE_DIR"
_FORMAT = 1


def default_cache_dir() -> Path:
    env = os.environ.get(CACHE_ENV)
    if env:
        return Path(env)
    return Path(os.environ.get("XDG_CACHE_HOME", Path.home() / ".cache")) / "privmap"


def cache_key(payload: dict) -> str:
    blob = json.dumps({"format": _FORMAT, **payload}, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


class PmfCache:
    """Content-addressed store of ``(probs, errors)`` arrays.

    Writes go through a temporary file and an atomic rename, so concurrent
    writers of the same key leave one complete entry behind.
    """

    def __init__(self, directory=None):
        self.directory = Path(directory) if directory is not None else default_cache_dir()

    def _path(self, key: str) -> Path:
        return self.directory / key[:2] / f"{key}.npz"

    def get(self, key: str):
        path = self._path(key)
        if not path.exists():
            return None
        with np.load(path) as data:
            return data["probs"], data["errors"]

    def put(self, key: str, probs: np.ndarray, errors: np.ndarray) -> None:
        path = self._path(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                np.savez(fh, probs=probs, errors=errors)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
