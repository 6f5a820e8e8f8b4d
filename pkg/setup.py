import os
import warnings

from setuptools import Extension, setup


def extensions():
    if os.environ.get("FEDQOT_PURE_PYTHON"):
        return []
    try:
        from Cython.Build import cythonize
    except ImportError:
        warnings.warn("Cython not available; installing the pure-Python kernels only")
        return []
    ext = Extension(
        "fedqot._kernels",
        ["src/fedqot/_kernels.pyx"],
        extra_compile_args=["-O3", "-ffp-contract=off"],
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


setup(ext_modules=extensions())
