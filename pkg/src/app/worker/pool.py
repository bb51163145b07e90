import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, TypeVar

log = logging.getLogger(__name__)

T = TypeVar("T")

# размер чанка фиксирован и не зависит от числа потоков: разбиение и порядок сборки одинаковы при любом --threads
DEFAULT_CHUNK_SIZE = 8


class ChunkedPool:
    """
    Пул потоков для попримерного вывода. Параметры модели только читаются,
    каждый пример обрабатывается ровно одним чанком, результаты собираются по порядку.
    """

    def __init__(self, threads: int = 1, chunk_size: int = DEFAULT_CHUNK_SIZE):
        if threads < 1:
            raise ValueError(f"threads must be >= 1, got {threads}")
        if chunk_size < 1:
            raise ValueError(f"chunk_size must be >= 1, got {chunk_size}")
        self.threads = int(threads)
        self.chunk_size = int(chunk_size)

    def chunks(self, n: int) -> list[slice]:
        return [slice(i, min(i + self.chunk_size, n)) for i in range(0, n, self.chunk_size)]

    def map_chunks(self, fn: Callable[[slice], T], n: int) -> list[T]:
        parts = self.chunks(n)
        log.debug("%d items in %d chunks on %d threads", n, len(parts), self.threads)
        if self.threads == 1 or len(parts) <= 1:
            return [fn(p) for p in parts]
        with ThreadPoolExecutor(max_workers=self.threads, thread_name_prefix="dgn-infer") as ex:
            return list(ex.map(fn, parts))
