"""Build the optional compiled kernel core.

The pure-numpy kernels in ``densetrack.kernels._numpy`` are used whenever the
extension is missing, so a failed compile never breaks the install.
"""

import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if os.environ.get("DENSETRACK_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "densetrack.kernels._ckernels",
                    ["src/densetrack/kernels/_ckernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={
                "language_level": "3",
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
                "initializedcheck": False,
            },
        )

setup(ext_modules=ext_modules)
