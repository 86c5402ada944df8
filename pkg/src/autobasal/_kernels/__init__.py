"""Simulation and filter kernels with optional compiled acceleration.

The reference backend (pure numpy/Python) always works. When the Cython
extension built from ``_speedups.pyx`` is importable it becomes the
default, because the likelihood kernel sits inside a derivative-free
optimizer inside a cohort loop and dominates total runtime. Pass
``backend="reference"`` or ``backend="compiled"`` (or a module exposing
the same callables) to pin a specific implementation.
"""

from . import reference

try:
    from . import _speedups
except ImportError:
    _speedups = None

default_backend = _speedups if _speedups is not None else reference


def have_compiled() -> bool:
    return _speedups is not None


def resolve(backend=None):
    """Map a backend spec (None, a name, or a module) to a kernel module."""
    if backend is None:
        return default_backend
    if isinstance(backend, str):
        if backend == "reference":
            return reference
        if backend == "compiled":
            if _speedups is None:
                raise RuntimeError(
                    "compiled kernels are not available; build the extension "
                    "or pass backend='reference'"
                )
            return _speedups
        raise ValueError(f"unknown backend {backend!r}; expected 'reference' or 'compiled'")
    return backend


def backend_name(backend=None) -> str:
    return "reference" if resolve(backend) is reference else "compiled"
