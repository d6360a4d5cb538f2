"""Replicate worker for Monte-Carlo loops."""

import logging
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from typing import Callable, List, Optional, TypeVar

from src.config import settings

logger = logging.getLogger(__name__)

T = TypeVar("T")


class ReplicateWorker:
    """Worker running one pure function per replicate index.

    Results are stored in slot ``index`` whatever order the threads finish
    in, so aggregates never depend on the thread count.
    """

    def __init__(self, threads: Optional[int] = None, progress_every: Optional[int] = None, name: str = "replicates"):
        """Initialize worker."""
        self.threads = max(1, threads or settings.threads)
        self.progress_every = progress_every or settings.progress_every
        self.name = name

    def _log_progress(self, processed: int, total: int) -> None:
        if processed % self.progress_every == 0 or processed == total:
            logger.info(f"Processed {processed}/{total} {self.name}")

    def map(self, fn: Callable[[int], T], count: int) -> List[T]:
        """Run ``fn(index)`` for index = 0 .. count-1 and return results by index."""
        results: List[Optional[T]] = [None] * count
        started = time.monotonic()
        logger.info(f"Starting {self.name}: {count} tasks on {self.threads} thread(s)")

        try:
            if self.threads == 1 or count <= 1:
                for index in range(count):
                    results[index] = fn(index)
                    self._log_progress(index + 1, count)
            else:
                processed = 0
                with ThreadPoolExecutor(max_workers=min(self.threads, count)) as executor:
                    futures = {executor.submit(fn, index): index for index in range(count)}
                    for future in as_completed(futures):
                        results[futures[future]] = future.result()
                        processed += 1
                        self._log_progress(processed, count)
        except KeyboardInterrupt:
            logger.info(f"{self.name} stopped by user")
            raise

        logger.info(f"Finished {self.name} in {time.monotonic() - started:.2f}s")
        return results  # type: ignore[return-value]
