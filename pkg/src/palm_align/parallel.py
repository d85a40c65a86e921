from concurrent.futures import ProcessPoolExecutor


def parallel_map(fn, items, workers=1, chunksize=1):
    """Ordered map, optionally over a process pool.

    ``fn`` must be a module-level function. Output order follows ``items`` so
    results never depend on ``workers``.
    """
    items = list(items)
    if workers is None or workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items, chunksize=chunksize))
