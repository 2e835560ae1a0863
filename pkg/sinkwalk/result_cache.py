"""
Result Cache

On-disk Parquet cache for computed series. Entries are keyed by a SHA-256 of
the canonical JSON of the computation request, so identical requests map to
the same file regardless of key order.
"""

import hashlib
import json
import logging
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

import pandas as pd

logger = logging.getLogger(__name__)


def request_key(request: Mapping[str, Any]) -> str:
    """SHA-256 hex digest of the request's canonical JSON"""
    canonical = json.dumps(request, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class ResultCache:
    """Manages on-disk caching of result tables using Parquet files"""

    def __init__(self, cache_dir: str = "results/cache"):
        """
        Initialize result cache

        Args:
            cache_dir: Directory to store cache files
        """
        self.cache_dir = Path(cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        self.metadata_file = self.cache_dir / "cache_metadata.json"
        self.cache_hits = 0
        self.cache_misses = 0

        self.metadata = self._load_metadata()

    def _load_metadata(self) -> Dict:
        """Load cache metadata from disk"""
        if self.metadata_file.exists():
            try:
                with open(self.metadata_file, 'r') as f:
                    return json.load(f)
            except (json.JSONDecodeError, OSError) as e:
                logger.warning(f"Failed to load cache metadata: {e}")
        return {}

    def _save_metadata(self):
        """Save cache metadata to disk"""
        try:
            with open(self.metadata_file, 'w') as f:
                json.dump(self.metadata, f, indent=2, sort_keys=True, default=str)
        except OSError as e:
            logger.error(f"Failed to save cache metadata: {e}")

    def _get_cache_path(self, cache_key: str) -> Path:
        return self.cache_dir / f"{cache_key}.parquet"

    def get(self, request: Mapping[str, Any]) -> Optional[pd.DataFrame]:
        """
        Retrieve a cached table

        Args:
            request: Computation request the table was stored under

        Returns:
            Cached DataFrame, or None on a miss or unreadable entry
        """
        cache_key = request_key(request)
        cache_path = self._get_cache_path(cache_key)

        if not cache_path.exists() or cache_key not in self.metadata:
            self.cache_misses += 1
            logger.debug(f"Cache miss for {cache_key[:12]}")
            return None

        try:
            df = pd.read_parquet(cache_path)
            self.cache_hits += 1
            logger.info(f"Cache hit for {self.metadata[cache_key].get('kind', 'result')} {cache_key[:12]}")
            return df
        except Exception as e:
            logger.error(f"Failed to read cache file {cache_path}: {e}")
            self.cache_misses += 1
            self._remove_cache_entry(cache_key)
            return None

    def set(self, request: Mapping[str, Any], data: pd.DataFrame, kind: str = "result"):
        """
        Store a table in the cache

        Args:
            request: Computation request used as the key
            data: DataFrame to cache
            kind: Label stored in the metadata
        """
        cache_key = request_key(request)
        cache_path = self._get_cache_path(cache_key)

        try:
            data.to_parquet(cache_path, compression='snappy')
            self.metadata[cache_key] = {
                'timestamp': datetime.now().isoformat(),
                'kind': kind,
                'request': dict(request),
                'file_size': cache_path.stat().st_size,
            }
            self._save_metadata()
            logger.info(f"Cached {kind} {cache_key[:12]}")
        except Exception as e:
            logger.error(f"Failed to cache {kind}: {e}")

    def _remove_cache_entry(self, cache_key: str):
        """Remove cache entry and its metadata"""
        cache_path = self._get_cache_path(cache_key)
        try:
            if cache_path.exists():
                cache_path.unlink()
            if cache_key in self.metadata:
                del self.metadata[cache_key]
                self._save_metadata()
        except Exception as e:
            logger.error(f"Failed to remove cache entry {cache_key}: {e}")

    def clear(self):
        """Remove every cached table"""
        for key in list(self.metadata.keys()):
            self._remove_cache_entry(key)
        for orphan in self.cache_dir.glob('*.parquet'):
            orphan.unlink()
        logger.info("Result cache cleared")

    def get_stats(self) -> Dict:
        """Hit/miss statistics and on-disk footprint"""
        total = self.cache_hits + self.cache_misses
        return {
            'cache_hits': self.cache_hits,
            'cache_misses': self.cache_misses,
            'hit_rate': self.cache_hits / total if total else 0.0,
            'entries': len(self.metadata),
            'total_size_bytes': sum(entry.get('file_size', 0) for entry in self.metadata.values()),
        }
