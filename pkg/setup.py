"""Build script for the optional compiled kernel.

The package works without the extension (a pure-Python twin of the kernel
is selected at import time), so the extension is marked optional and any
build failure degrades to the fallback instead of failing the install.

-ffp-contract=off matters: the pure backend and the compiled backend are
required to produce bit-identical trajectories, and fused multiply-adds
would silently change the rounding of the plant update.
"""

from setuptools import setup, Extension

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

ext_modules = []
if cythonize is not None:
    ext = Extension(
        "evsim._kernels._speedups",
        ["src/evsim/_kernels/_speedups.pyx"],
        extra_compile_args=["-O3", "-ffp-contract=off"],
    )
    ext.optional = True
    ext_modules = cythonize([ext], language_level=3)

setup(ext_modules=ext_modules)
