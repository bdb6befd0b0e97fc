# File: utils/lru_cache.py
"""Thread-safe least-recently-used cache bounded by the byte size of its values"""

import logging
import threading
from collections import OrderedDict
from typing import Callable, Generic, Hashable, Optional, TypeVar

logger = logging.getLogger(__name__)

V = TypeVar('V')


class LRUCache(Generic[V]):
    """
    Mapping that evicts the least recently used entries once the summed
    ``size_of`` of its values exceeds ``max_bytes``

    A single value larger than ``max_bytes`` is never stored.
    """

    def __init__(self, max_bytes: int, size_of: Callable[[V], int]):
        if max_bytes < 0:
            raise ValueError(f"max_bytes must be >= 0, got {max_bytes}")
        self.max_bytes = max_bytes
        self.size_of = size_of
        self._items: 'OrderedDict[Hashable, V]' = OrderedDict()
        self._sizes = {}
        self._used = 0
        self._lock = threading.Lock()

    def __len__(self) -> int:
        with self._lock:
            return len(self._items)

    def __contains__(self, key: Hashable) -> bool:
        with self._lock:
            return key in self._items

    @property
    def used_bytes(self) -> int:
        return self._used

    def get(self, key: Hashable) -> Optional[V]:
        with self._lock:
            value = self._items.get(key)
            if value is not None:
                self._items.move_to_end(key)
            return value

    def put(self, key: Hashable, value: V) -> None:
        size = int(self.size_of(value))
        with self._lock:
            if key in self._items:
                self._used -= self._sizes.pop(key)
                del self._items[key]
            if size > self.max_bytes:
                logger.debug("value for %r is %d bytes, over the %d byte budget", key, size, self.max_bytes)
                return
            self._items[key] = value
            self._sizes[key] = size
            self._used += size
            while self._used > self.max_bytes:
                old, _ = self._items.popitem(last=False)
                self._used -= self._sizes.pop(old)

    def get_or_compute(self, key: Hashable, compute: Callable[[], V]) -> V:
        hit = self.get(key)
        if hit is not None:
            return hit
        value = compute()
        self.put(key, value)
        return value

    def clear(self) -> None:
        with self._lock:
            self._items.clear()
            self._sizes.clear()
            self._used = 0
