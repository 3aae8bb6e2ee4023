"""Build script: compiles the optional SLIC extension when Cython and a C
compiler are available.  The package falls back to the pure-NumPy kernels in
``synthscope._native.slic_py`` when the extension is missing, so a failed
extension build is not fatal."""

from setuptools import setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "synthscope._native._slic",
                ["src/synthscope/_native/_slic.pyx"],
                include_dirs=[numpy.get_include()],
                # -ffp-contract=off keeps the compiled kernels bit-identical
                # to the NumPy fallback (no FMA contraction).
                extra_compile_args=["-O3", "-ffp-contract=off"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
