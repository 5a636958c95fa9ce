import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

openmp = os.environ.get("NSGP_NO_OPENMP", "") == ""
compile_args = ["-O3"] + (["-fopenmp"] if openmp else [])
link_args = ["-fopenmp"] if openmp else []

ext_modules = []
if cythonize is not None:
    ext_modules = cythonize(
        [
            Extension(
                "nsgp._ckernels",
                ["src/nsgp/_ckernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=compile_args,
                extra_link_args=link_args,
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
