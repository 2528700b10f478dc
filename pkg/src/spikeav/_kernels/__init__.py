"""Kernel backend selection.

Two interchangeable implementations of the hot kernels exist: a Cython
extension (``_core``) and a numpy reference (``numpy_backend``). Selection
happens once, at import:

* ``SPIKEAV_KERNELS=numpy``     force the numpy kernels everywhere
* ``SPIKEAV_KERNELS=compiled``  force the extension everywhere (import error
  if it was not built)
* ``SPIKEAV_KERNELS=auto``      (default) membrane scans from the extension
  when built, convolution via numpy. Measured on desktop CPUs the BLAS-backed
  im2col convolution outruns the direct compiled loops, while the fused
  compiled scans win on the small per-sample shapes; see
  ``benchmarks/bench_kernels.py`` to re-measure on your machine.
"""

import os

from . import numpy_backend

try:
    from . import _core as _compiled
except ImportError:
    _compiled = None

_requested = os.environ.get("SPIKEAV_KERNELS", "auto").lower()

if _requested == "numpy":
    _conv_impl = _scan_impl = numpy_backend
    NAME = "numpy"
elif _requested == "compiled":
    if _compiled is None:
        raise ImportError(
            "SPIKEAV_KERNELS=compiled but the extension is not built; "
            "run `pip install -e .` or `python setup.py build_ext --inplace`")
    _conv_impl = _scan_impl = _compiled
    NAME = "compiled"
elif _requested == "auto":
    _conv_impl = numpy_backend
    _scan_impl = _compiled if _compiled is not None else numpy_backend
    NAME = "auto:conv=numpy,scan=" + ("compiled" if _compiled else "numpy")
else:
    raise ImportError(f"unknown SPIKEAV_KERNELS value {_requested!r}")

conv2d_forward = _conv_impl.conv2d_forward
conv2d_backward = _conv_impl.conv2d_backward
lif_scan_forward = _scan_impl.lif_scan_forward
lif_scan_backward = _scan_impl.lif_scan_backward
lif_scan_relaxed_forward = _scan_impl.lif_scan_relaxed_forward
lif_scan_relaxed_backward = _scan_impl.lif_scan_relaxed_backward


def available_backends():
    """Names of backends importable in this environment."""
    names = ["numpy"]
    if _compiled is not None:
        names.append("compiled")
    return names


def get_backend(name):
    """Fetch a backend module by name (for tests and benchmarks)."""
    if name == "numpy":
        return numpy_backend
    if name == "compiled":
        if _compiled is None:
            raise ImportError("compiled kernels are not built")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")
