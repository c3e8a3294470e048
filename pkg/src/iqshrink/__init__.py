"""Cross-channel self-attention with garrote residual shrinkage for I/Q modulation classification."""
import os as _os

# Strict deterministic mode must pin BLAS threads before numpy loads.
if _os.environ.get("IQSHRINK_THREADS"):
    for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _os.environ["IQSHRINK_THREADS"])

__version__ = "0.1.0"
