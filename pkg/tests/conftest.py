import os

# Tiny-matrix workloads: BLAS thread pools only slow things down. Must be set
# before numpy initializes its BLAS backend.
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

try:
    from threadpoolctl import threadpool_limits

    _limiter = threadpool_limits(limits=1)
except ImportError:  # pragma: no cover
    pass
