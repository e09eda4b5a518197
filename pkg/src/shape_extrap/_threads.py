import os

ENV_VAR = "SHAPE_EXTRAP_THREADS"


def worker_count():
    """Worker cap from ``SHAPE_EXTRAP_THREADS``, else the CPU count."""
    val = os.environ.get(ENV_VAR)
    if val:
        try:
            return max(1, int(val))
        except ValueError:
            pass
    return os.cpu_count() or 1
