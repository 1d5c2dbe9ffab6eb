"""Shared test configuration.

BLAS is pinned to one thread: at the matrix sizes these kernels use,
multithreaded BLAS costs more in synchronization than it saves, and the
timed acceptance criteria rely on stable kernel throughput.
"""

try:
    from threadpoolctl import threadpool_limits
    threadpool_limits(limits=1)
except ImportError:
    pass
