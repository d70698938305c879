"""Large-time asymptotic expansions of planar Navier-Stokes flow."""
import os as _os

# NSASYM_THREADS caps BLAS/OpenMP threads; it must be set before numpy loads.
if "NSASYM_THREADS" in _os.environ:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _os.environ["NSASYM_THREADS"])
