"""Build script for the optional compiled kernels.

The hot loops (text hashing for the embedder, the cosine scan over the
vector index, and the per-tick water-filling allocator) ship as a Cython
extension ``ranops.kernels._core``.  The package is fully functional
without it: ``ranops.kernels`` falls back to the pure-Python twin at
import time.  Compilation failures therefore degrade the install instead
of breaking it.
"""

import sys

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    """build_ext that downgrades compiler failures to a warning."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # pragma: no cover - toolchain dependent
            self._warn(exc)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # pragma: no cover - toolchain dependent
            self._warn(exc)

    @staticmethod
    def _warn(exc):
        sys.stderr.write(
            "warning: compiled kernels unavailable (%s); "
            "falling back to pure-Python kernels\n" % exc
        )


def extensions():
    try:
        from Cython.Build import cythonize
    except ImportError:  # pragma: no cover - build env without Cython
        return []
    return cythonize(
        [
            Extension(
                "ranops.kernels._core",
                ["src/ranops/kernels/_core.pyx"],
                extra_compile_args=["-O3"],
            )
        ],
        language_level=3,
    )


setup(ext_modules=extensions(), cmdclass={"build_ext": OptionalBuildExt})
