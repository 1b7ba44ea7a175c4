import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

random_lib = os.path.join(os.path.dirname(np.__file__), "random", "lib")

extensions = []
if cythonize is not None and not os.environ.get("SOCIAL_SAMPLER_NO_EXT"):
    extensions = cythonize(
        [
            Extension(
                "social_sampler._core",
                ["src/social_sampler/_core.pyx"],
                include_dirs=[np.get_include()],
                library_dirs=[random_lib],
                libraries=["npyrandom", "m"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
                optional=True,
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=extensions)
