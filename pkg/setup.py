import os

import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

# the direct convolution loops only vectorise well with the host's widest
# SIMD; set GPRINV_PORTABLE=1 to build a generic x86-64 binary instead
flags = ["-O3"]
if os.environ.get("GPRINV_PORTABLE", "0") != "1":
    flags.append("-march=native")

ext_modules = cythonize(
    [
        Extension(
            "gprinv._ckernels",
            ["src/gprinv/_ckernels.pyx"],
            include_dirs=[np.get_include()],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            extra_compile_args=flags,
        )
    ],
    language_level=3,
)

setup(ext_modules=ext_modules)
