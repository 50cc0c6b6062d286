"""Build the optional compiled kernel; the package works without it via the pure fallback.

In-place build for development checkouts:

    python3 setup.py build_ext --inplace
"""

from setuptools import Extension, setup

ext_modules = []
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "oncoeval._kernels._speedups",
                ["src/oncoeval/_kernels/_speedups.pyx"],
                extra_compile_args=["-O3"],
                optional=True,
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    # No Cython available: ship pure Python only.
    pass

setup(ext_modules=ext_modules)
