"""Hot numerical kernels with a compiled backend and a numpy fallback.

The compiled extension is used when it imports cleanly. Set
``PRESS_KERNELS=numpy`` to force the fallback (the test suite exercises both).
"""

import os

from . import _numpy_kernels as numpy_backend

compiled_backend = None
try:
    from . import _ckernels as compiled_backend
except ImportError:  # extension not built
    compiled_backend = None

if compiled_backend is not None and os.environ.get("PRESS_KERNELS", "").lower() != "numpy":
    backend = compiled_backend
    BACKEND_NAME = "compiled"
else:
    backend = numpy_backend
    BACKEND_NAME = "numpy"

linear_scan = backend.linear_scan
gamma_p = backend.gamma_p
ln_gamma = backend.ln_gamma
depthwise_conv = backend.depthwise_conv
depthwise_conv_grad = backend.depthwise_conv_grad

__all__ = [
    "BACKEND_NAME",
    "backend",
    "compiled_backend",
    "numpy_backend",
    "linear_scan",
    "gamma_p",
    "ln_gamma",
    "depthwise_conv",
    "depthwise_conv_grad",
]
