import threading
from typing import Iterable

import numpy as np

from src.app.domain.services.seeding import CHAIN_INIT, example_key, rng_for
from src.app.domain.value_objects import LatentPair


class ChainStore:
    """
    Персистентные цепочки Ланжевена: example_id -> текущее (Z^a, Z^g).
    При первом обращении состояние берётся из априорного N(0, I) и сохраняется.
    """

    def __init__(self, d_a: int, d_g: int, seed: int = 0, dtype=np.float32):
        self.d_a = int(d_a)
        self.d_g = int(d_g)
        self.seed = int(seed)
        self.dtype = np.dtype(dtype)
        self._states: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._states)

    def __contains__(self, example_id: str) -> bool:
        return str(example_id) in self._states

    def ids(self) -> list[str]:
        return list(self._states)

    def _fresh(self, example_id: str) -> tuple[np.ndarray, np.ndarray]:
        rng = rng_for(self.seed, CHAIN_INIT, example_key(example_id))
        z_a = rng.standard_normal(self.d_a).astype(self.dtype)
        z_g = rng.standard_normal(self.d_g).astype(self.dtype)
        return z_a, z_g

    def warm_start(self, example_id: str) -> LatentPair:
        key = str(example_id)
        with self._lock:
            if key not in self._states:
                self._states[key] = self._fresh(key)
            z_a, z_g = self._states[key]
        return LatentPair(appearance=z_a.copy(), geometric=z_g.copy())

    def put(self, example_id: str, latents: LatentPair) -> None:
        if latents.size != 1:
            raise ValueError(f"put expects a single latent pair, got batch of {latents.size}")
        with self._lock:
            self._states[str(example_id)] = (
                latents.appearance[0].astype(self.dtype),
                latents.geometric[0].astype(self.dtype),
            )

    def get_many(self, example_ids: Iterable[str]) -> LatentPair:
        return LatentPair.concat([self.warm_start(e) for e in example_ids])

    def put_many(self, example_ids: Iterable[str], latents: LatentPair) -> None:
        for i, e in enumerate(example_ids):
            self.put(e, latents.take(i))

    def as_arrays(self) -> tuple[list[str], np.ndarray, np.ndarray]:
        ids = self.ids()
        z_a = np.stack([self._states[e][0] for e in ids]) if ids else np.zeros((0, self.d_a), self.dtype)
        z_g = np.stack([self._states[e][1] for e in ids]) if ids else np.zeros((0, self.d_g), self.dtype)
        return ids, z_a, z_g

    @staticmethod
    def from_arrays(ids: list[str], z_a: np.ndarray, z_g: np.ndarray, seed: int = 0) -> "ChainStore":
        store = ChainStore(z_a.shape[1], z_g.shape[1], seed=seed, dtype=z_a.dtype)
        for i, e in enumerate(ids):
            store._states[str(e)] = (z_a[i].copy(), z_g[i].copy())
        return store
