"""Build script: compiles the optional Cython kernel extension.

The package works without the extension (a NumPy fallback is selected at
import time), so any failure here degrades to a pure-Python install.
Set DAMPSIM_SKIP_EXT=1 to skip the extension build entirely.
"""

import os

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext

ext_modules = []
cmdclass = {}

if not os.environ.get("DAMPSIM_SKIP_EXT"):
    try:
        import numpy
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "dampsim._kernels",
                    ["src/dampsim/_kernels.pyx"],
                    include_dirs=[numpy.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    # -fcx-limited-range: inline naive complex multiplies
                    # instead of the checked __muldc3 helper (2-3x faster
                    # inner loops; no complex division in the kernels).
                    extra_compile_args=["-O3", "-fcx-limited-range"],
                )
            ],
            compiler_directives={
                "language_level": 3,
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
                "initializedcheck": False,
            },
        )
    except ImportError:
        ext_modules = []

    class OptionalBuildExt(build_ext):
        """Build the extension if possible; fall back to pure Python otherwise."""

        def run(self):
            try:
                super().run()
            except Exception as exc:  # compiler missing, etc.
                print(f"warning: skipping compiled kernels ({exc}); "
                      "the NumPy fallback will be used")

        def build_extension(self, ext):
            try:
                super().build_extension(ext)
            except Exception as exc:
                print(f"warning: failed to build {ext.name} ({exc}); "
                      "the NumPy fallback will be used")

    cmdclass["build_ext"] = OptionalBuildExt

setup(ext_modules=ext_modules, cmdclass=cmdclass)
