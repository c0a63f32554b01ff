import os

import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

# Opt out of the compiled kernels (pure-Python fallback only).
if os.environ.get("TENSORFMRI_NO_EXT"):
    ext_modules = []
else:
    npy_random_lib = os.path.join(os.path.dirname(np.__file__), "random", "lib")
    ext_modules = cythonize(
        [
            Extension(
                "tensorfmri._kernels",
                ["src/tensorfmri/_kernels.pyx"],
                include_dirs=[np.get_include()],
                library_dirs=[npy_random_lib],
                libraries=["npyrandom"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": 3},
    )

setup(ext_modules=ext_modules)
