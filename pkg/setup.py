"""Build script for the optional compiled kernel extension.

The package works without the extension: reifcover._backend falls back to
pure numpy implementations when the compiled module is absent or when
REIF_FORCE_PURE=1 is set.  Setting REIF_NO_EXT=1 skips the build entirely.
"""

import os

from setuptools import Extension, setup


def _extensions():
    if os.environ.get("REIF_NO_EXT") == "1":
        return []
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError:
        return []
    ext = Extension(
        "reifcover._speedups",
        sources=["src/reifcover/_speedups.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize(
        [ext],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )


setup(ext_modules=_extensions())
