"""Builds the optional Cython kernel extension.

If Cython (or a C compiler) is unavailable the install proceeds without the
extension and the package falls back to the numpy kernel at import time.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [Extension("unimul._gemmcore", ["src/unimul/_gemmcore.pyx"])],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
