"""RIRL: policy-gradient principal-agent simulations with attention priced
via discriminator-estimated mutual information."""

__version__ = "0.1.0"

# the workload is thousands of tiny matmuls: BLAS thread fan-out only adds
# synchronization cost, so pin the pools to one thread per process
try:
    import numpy as _np  # noqa: F401  (loads the BLAS before limiting it)
    from threadpoolctl import threadpool_limits as _threadpool_limits

    _threadpool_limits(limits=1)
except Exception:  # pragma: no cover - threadpoolctl is optional
    pass
