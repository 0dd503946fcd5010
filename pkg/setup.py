"""Build script: compiles the optional Cython kernel extension.

The package is fully functional without the extension (a pure-Python
kernel backend is selected at import time), so a failed compile must not
abort installation.
"""

import sys

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    """build_ext that degrades to the pure-Python backend on any failure."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing, etc.
            self._warn(exc)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            self._warn(exc)

    @staticmethod
    def _warn(exc):
        print(
            "warning: could not build the compiled kernel backend "
            f"({exc!r}); falling back to the pure-Python kernels",
            file=sys.stderr,
        )


def ext_modules():
    try:
        from Cython.Build import cythonize
    except ImportError:
        return []
    ext = Extension(
        "mtprompt._kernels.cyker",
        ["src/mtprompt/_kernels/cyker.pyx"],
        extra_compile_args=["-O3"],
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


setup(cmdclass={"build_ext": OptionalBuildExt}, ext_modules=ext_modules())
