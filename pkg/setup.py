"""Build script: compiles the optional kernel extension.

The extension is a speedup, not a requirement -- if Cython or a C compiler
is missing the install still succeeds and ragfuzz.kernels falls back to the
pure-Python implementations.

-ffp-contract=off keeps float results bit-identical between the compiled
and pure paths (no FMA contraction); the test suite relies on that.
"""

from setuptools import setup

ext_modules = []
try:
    from Cython.Build import cythonize
    from setuptools.extension import Extension

    ext_modules = cythonize(
        [
            Extension(
                "ragfuzz.kernels._kernels",
                ["src/ragfuzz/kernels/_kernels.pyx"],
                extra_compile_args=["-O2", "-ffp-contract=off"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
