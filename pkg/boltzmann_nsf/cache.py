"""
Binary operator cache: numpy archives with a JSON header carrying the format
version and the (grid, kernel) key.
"""

import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Union

import numpy as np

from .exceptions import CacheVersionError

logger = logging.getLogger(__name__)

CACHE_VERSION = 1


class OperatorCache:
    """Directory of cached dense operators (L, Gram matrices)."""

    def __init__(self, directory: Optional[Union[str, Path]]):
        self.directory = Path(directory) if directory else None
        if self.directory is not None:
            self.directory.mkdir(parents=True, exist_ok=True)

    @staticmethod
    def _digest(key: Dict[str, Any]) -> str:
        return hashlib.sha1(json.dumps(key, sort_keys=True).encode()).hexdigest()[:16]

    def path_for(self, name: str, key: Dict[str, Any]) -> Optional[Path]:
        if self.directory is None:
            return None
        return self.directory / f"{name}-{self._digest(key)}.npz"

    def load(self, name: str, key: Dict[str, Any]) -> Optional[Dict[str, np.ndarray]]:
        path = self.path_for(name, key)
        if path is None or not path.exists():
            return None
        with np.load(path, allow_pickle=False) as archive:
            header = json.loads(str(archive["header"]))
            if header.get("version") != CACHE_VERSION:
                raise CacheVersionError(f"{path}: cache version {header.get('version')} != {CACHE_VERSION}")
            if header.get("key") != json.loads(json.dumps(key, sort_keys=True)):
                logger.info("cache key mismatch for %s, recomputing", path.name)
                return None
            logger.info("cache hit: %s", path.name)
            return {k: archive[k] for k in archive.files if k != "header"}

    def store(self, name: str, key: Dict[str, Any], arrays: Dict[str, np.ndarray]) -> Optional[Path]:
        path = self.path_for(name, key)
        if path is None:
            return None
        header = json.dumps({"version": CACHE_VERSION, "key": json.loads(json.dumps(key, sort_keys=True))})
        np.savez(path, header=np.array(header), **arrays)
        logger.info("cache store: %s", path.name)
        return path

    def get_or_compute(self, name: str, key: Dict[str, Any], compute: Callable[[], Dict[str, np.ndarray]]) -> Dict[str, np.ndarray]:
        cached = self.load(name, key)
        if cached is not None:
            return cached
        arrays = compute()
        self.store(name, key, arrays)
        return arrays


def operator_key(grid, kernel, **extra) -> Dict[str, Any]:
    key = {**grid.key(), **kernel.key()}
    key.update(extra)
    return key
