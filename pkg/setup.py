"""Build script for the optional compiled kernel extension.

The package works without the extension (a numpy fallback is selected at
import time); building it just speeds up the hot attention/normalization
loops. Any failure here degrades to a pure-Python install.
"""

import sys

from setuptools import Extension, setup


def _extensions():
    try:
        from Cython.Build import cythonize
    except ImportError:
        print("warning: Cython not available, building without compiled kernels",
              file=sys.stderr)
        return []
    ext = Extension(
        "cpfm.backend._ckernels",
        ["src/cpfm/backend/_ckernels.pyx"],
    )
    return cythonize(
        [ext],
        compiler_directives={
            "language_level": 3,
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )


try:
    ext_modules = _extensions()
except Exception as exc:  # cythonize failure should not block install
    print(f"warning: compiled kernels skipped ({exc})", file=sys.stderr)
    ext_modules = []

setup(ext_modules=ext_modules)
