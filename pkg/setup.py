"""Build script: compiles the convolution kernel extension when Cython and a
C toolchain are available. The package works without it (pure-numpy fallback
in followme.kernels), so extension build failures are non-fatal.
"""

import warnings

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class optional_build_ext(build_ext):
    """Swallow extension build errors; the runtime falls back to numpy."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing, etc.
            warnings.warn(f"skipping compiled kernels ({exc}); using pure-python fallback")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            warnings.warn(f"skipping {ext.name} ({exc}); using pure-python fallback")


def make_extensions():
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError:
        return []
    ext = Extension(
        "followme.kernels._convcore",
        ["src/followme/kernels/_convcore.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
    )
    return cythonize([ext], compiler_directives={"language_level": 3, "embedsignature": True})


setup(
    ext_modules=make_extensions(),
    cmdclass={"build_ext": optional_build_ext},
)
