"""Hot numeric kernels with numba and pure-numpy backends.

Set ``CURRSTAT_DISABLE_NUMBA=1`` to force the numpy fallback. Both
backends expose the same functions and are cross-checked in the test
suite and in ``benchmarks/bench_kernels.py``.
"""

from .._backend import using_numba

if using_numba():
    from ._numba import pava, cs_loglik, cox_fit
else:
    from ._numpy import pava, cs_loglik, cox_fit

__all__ = ["pava", "cs_loglik", "cox_fit", "using_numba"]
