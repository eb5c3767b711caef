"""Build script: compiles the optional Cython core.

The compiled extension is a pure speedup; if Cython or a C compiler is
missing, the build degrades to the pure-NumPy kernels in
``lcskit._kernels_py`` (selected automatically at import).
"""

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    """build_ext that warns instead of failing when compilation breaks."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing entirely
            print(f"warning: skipping compiled core ({exc}); "
                  "lcskit will use the pure-NumPy kernels")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"warning: could not build {ext.name} ({exc}); "
                  "lcskit will use the pure-NumPy kernels")


ext_modules = []
try:
    import os

    if not os.path.exists("src/lcskit/_core.pyx"):
        raise ImportError("no Cython source present")
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "lcskit._core",
                ["src/lcskit/_core.pyx"],
                # -ffp-contract=off keeps the arithmetic bit-comparable with
                # the NumPy fallback (no FMA contraction).
                extra_compile_args=["-O3", "-ffp-contract=off"],
            )
        ],
        language_level=3,
    )
except ImportError:
    print("warning: Cython not available; building lcskit without the "
          "compiled core")

setup(ext_modules=ext_modules, cmdclass={"build_ext": OptionalBuildExt})
