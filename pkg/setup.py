import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "arterylabel.kernels._native",
                ["src/arterylabel/kernels/_native.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
            )
        ],
        language_level=3,
    )
except ImportError:
    # Pure-python fallback in arterylabel.kernels keeps the package usable
    # without a compiler; only the fast core is skipped.
    ext_modules = []

setup(ext_modules=ext_modules)
