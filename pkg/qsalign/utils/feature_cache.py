# qsalign/utils/feature_cache.py
import threading
from collections import OrderedDict
from typing import Any, Hashable, Optional


class FeatureCache:
    """Bounded LRU memo for per-(context, suggestion) feature vectors.

    Vectors are immutable once computed, so entries never expire; the oldest
    entry is evicted when ``max_entries`` is exceeded. Rollout and CTR
    workers share one instance, so every access holds the lock.
    """

    def __init__(self, max_entries: int = 200_000):
        self._store: "OrderedDict[Hashable, Any]" = OrderedDict()
        self._lock = threading.Lock()
        self.max_entries = max_entries
        self.hits = 0
        self.misses = 0

    def get(self, key: Hashable) -> Optional[Any]:
        with self._lock:
            item = self._store.get(key)
            if item is None:
                self.misses += 1
                return None
            self._store.move_to_end(key)
            self.hits += 1
            return item

    def set(self, key: Hashable, value: Any) -> None:
        with self._lock:
            self._store[key] = value
            self._store.move_to_end(key)
            while len(self._store) > self.max_entries:
                self._store.popitem(last=False)

    def clear(self) -> None:
        with self._lock:
            self._store.clear()
            self.hits = self.misses = 0

    def __len__(self) -> int:
        with self._lock:
            return len(self._store)


feature_cache = FeatureCache()
