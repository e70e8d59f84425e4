"""Thread-pool driver for independent work units (replicates, folds, repeats)"""
import logging
import queue
import threading

from config import Config

logger = logging.getLogger(__name__)


class TaskFailed:
    """Placeholder result for a unit that raised"""

    def __init__(self, index, error):
        self.index = index
        self.error = error

    def __repr__(self):
        return f"TaskFailed({self.index}, {self.error!r})"


def _run_one(func, index, item):
    try:
        return func(item)
    except Exception as e:  # recorded per unit, the caller decides
        logger.debug(f"Work unit {index} failed: {e}")
        return TaskFailed(index, e)


def run_indexed(func, items, workers=None):
    """
    Apply func to every item and return results in item order.

    A unit that raises yields a TaskFailed in its slot. The output does not
    depend on the worker count, because each unit only sees its own item and
    results are placed by index.
    """
    items = list(items)
    workers = min(Config.workers(workers), max(len(items), 1))
    if workers <= 1:
        return [_run_one(func, index, item) for index, item in enumerate(items)]

    work = queue.Queue()
    for index, item in enumerate(items):
        work.put((index, item))

    results = {}
    results_lock = threading.Lock()

    def worker():
        while True:
            try:
                index, item = work.get_nowait()
            except queue.Empty:
                return
            try:
                outcome = _run_one(func, index, item)
                with results_lock:
                    results[index] = outcome
            except Exception as e:
                logger.error(f"Worker error on unit {index}: {e}", exc_info=True)
                with results_lock:
                    results[index] = TaskFailed(index, e)
            finally:
                work.task_done()

    threads = [threading.Thread(target=worker, daemon=True, name=f'qsel-worker-{i}') for i in range(workers)]
    for thread in threads:
        thread.start()
    work.join()
    for thread in threads:
        thread.join()

    return [results[index] for index in range(len(items))]


def split_failures(results):
    """Separate successful results from TaskFailed placeholders"""
    ok = [r for r in results if not isinstance(r, TaskFailed)]
    failed = [r for r in results if isinstance(r, TaskFailed)]
    return ok, failed
