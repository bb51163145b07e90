import zlib

import numpy as np

# пространства ключей SeedSequence
CHAIN_INIT = 0
LANGEVIN_NOISE = 1
BATCH_ORDER = 2
VAE_NOISE = 3
PARAM_INIT = 4
SYNTH = 5


def example_key(example_id: str) -> int:
    return zlib.crc32(str(example_id).encode("utf-8"))


def rng_for(seed: int, *key: int) -> np.random.Generator:
    """Независимый поток для (seed, key): не зависит от порядка обработки и числа воркеров."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key)))
