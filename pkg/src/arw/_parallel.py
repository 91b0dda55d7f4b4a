"""Trial fan-out whose results do not depend on the thread count.

Work is cut into fixed-size chunks (independent of ``threads``); each chunk
is computed by a nogil kernel call and the pieces are concatenated in chunk
order.
"""

from concurrent.futures import ThreadPoolExecutor

import numpy as np

CHUNK = 128


def run_chunked(fn, n_items, threads=1, chunk=CHUNK):
    """Call ``fn(a, b)`` on consecutive ranges covering ``range(n_items)``.

    ``fn`` returns a tuple of 1-d arrays; the result is the tuple of their
    concatenations.
    """
    bounds = [(a, min(a + chunk, n_items)) for a in range(0, n_items, chunk)]
    if not bounds:
        return None
    if threads <= 1 or len(bounds) == 1:
        parts = [fn(a, b) for a, b in bounds]
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(lambda ab: fn(*ab), bounds))
    return tuple(np.concatenate([p[i] for p in parts]) for i in range(len(parts[0])))
