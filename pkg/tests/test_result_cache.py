"""
Tests for the Result Cache

Tests for request keys, Parquet storage, hit/miss accounting and cleanup.
"""

import json
import shutil
import tempfile
from pathlib import Path
import pytest
import numpy as np
import pandas as pd

# Add package to path
import sys
sys.path.append(str(Path(__file__).parent.parent))

from sinkwalk.result_cache import ResultCache, request_key


def _series_frame() -> pd.DataFrame:
    return pd.DataFrame(
        {'P_continual': [0.0, 0.5, 0.5, 0.625], 'P_reset': [0.0, 0.5, 0.5, 0.5625]},
        index=pd.Index(np.arange(1, 5), name='t'),
    )


class TestRequestKey:
    """Test cases for cache keys"""

    def test_key_independent_of_order(self):
        """Test keys ignore dictionary order"""
        a = request_key({'kind': 'recurrence', 'T': 4, 'coin': 'hadamard'})
        b = request_key({'coin': 'hadamard', 'T': 4, 'kind': 'recurrence'})
        assert a == b
        assert len(a) == 64

    def test_key_depends_on_values(self):
        """Test different requests give different keys"""
        assert request_key({'T': 4}) != request_key({'T': 5})


class TestResultCache:
    """Test cases for the Parquet result cache"""

    def setup_method(self):
        """Setup for each test method"""
        self.temp_dir = tempfile.mkdtemp()
        self.cache = ResultCache(self.temp_dir)
        self.request = {'kind': 'recurrence', 'T': 4}

    def teardown_method(self):
        """Cleanup after each test method"""
        shutil.rmtree(self.temp_dir, ignore_errors=True)

    def test_miss_then_hit(self):
        """Test a stored table is returned on the next lookup"""
        assert self.cache.get(self.request) is None

        self.cache.set(self.request, _series_frame(), kind="recurrence")
        cached = self.cache.get(self.request)

        pd.testing.assert_frame_equal(cached, _series_frame())
        stats = self.cache.get_stats()
        assert stats['cache_hits'] == 1
        assert stats['cache_misses'] == 1
        assert stats['hit_rate'] == 0.5
        assert stats['entries'] == 1
        assert stats['total_size_bytes'] > 0

    def test_metadata_persisted(self):
        """Test metadata survives a new cache instance"""
        self.cache.set(self.request, _series_frame(), kind="recurrence")

        reopened = ResultCache(self.temp_dir)
        assert reopened.get(self.request) is not None

        with open(Path(self.temp_dir) / "cache_metadata.json") as f:
            metadata = json.load(f)
        entry = metadata[request_key(self.request)]
        assert entry['kind'] == "recurrence"
        assert entry['request'] == self.request

    def test_corrupt_entry_removed(self):
        """Test unreadable Parquet files are dropped"""
        self.cache.set(self.request, _series_frame())
        key = request_key(self.request)
        (Path(self.temp_dir) / f"{key}.parquet").write_bytes(b"not parquet")

        assert self.cache.get(self.request) is None
        assert key not in self.cache.metadata

    def test_corrupt_metadata_ignored(self):
        """Test a damaged metadata file starts an empty cache"""
        (Path(self.temp_dir) / "cache_metadata.json").write_text("{broken")
        cache = ResultCache(self.temp_dir)
        assert cache.metadata == {}

    def test_clear(self):
        """Test clearing removes every entry"""
        self.cache.set(self.request, _series_frame())
        self.cache.set({'kind': 'classical', 'T': 4}, _series_frame())

        self.cache.clear()

        assert self.cache.get_stats()['entries'] == 0
        assert list(Path(self.temp_dir).glob('*.parquet')) == []

    def test_empty_stats(self):
        """Test statistics of an unused cache"""
        stats = self.cache.get_stats()
        assert stats['hit_rate'] == 0.0
        assert stats['entries'] == 0
