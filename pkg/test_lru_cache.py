#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""Tests for the byte-bounded LRU cache"""

import numpy as np
import pytest

from utils.lru_cache import LRUCache


def _cache(max_bytes):
    return LRUCache(max_bytes, lambda values: values.nbytes)


def test_evicts_oldest_first():
    cache = _cache(3 * 8)
    for key in 'abc':
        cache.put(key, np.zeros(1))
    cache.get('a')
    cache.put('d', np.zeros(1))
    assert 'b' not in cache
    assert all(k in cache for k in 'acd')
    assert cache.used_bytes == 24


def test_oversized_value_is_not_stored():
    cache = _cache(8)
    cache.put('big', np.zeros(4))
    assert len(cache) == 0 and cache.used_bytes == 0


def test_replacing_a_key_updates_size():
    cache = _cache(64)
    cache.put('a', np.zeros(4))
    cache.put('a', np.zeros(2))
    assert len(cache) == 1 and cache.used_bytes == 16


def test_get_or_compute_calls_once():
    cache = _cache(64)
    calls = []

    def compute():
        calls.append(1)
        return np.ones(2)

    first = cache.get_or_compute('k', compute)
    second = cache.get_or_compute('k', compute)
    assert first is second and len(calls) == 1
    cache.clear()
    assert len(cache) == 0 and cache.used_bytes == 0


def test_negative_budget():
    with pytest.raises(ValueError, match='max_bytes'):
        _cache(-1)
