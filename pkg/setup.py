"""Build script for the optional compiled kernel extension.

The package works without the extension; ``svbp.kernels`` falls back to the
numpy implementation when ``svbp.kernels._ckernels`` cannot be imported.
"""

import os

from setuptools import Extension, setup


def get_extensions():
    if os.environ.get("SVBP_NO_EXTENSION"):
        return []
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError:
        return []
    ext = Extension(
        "svbp.kernels._ckernels",
        ["src/svbp/kernels/_ckernels.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=["-O3"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], language_level=3)


setup(ext_modules=get_extensions())
