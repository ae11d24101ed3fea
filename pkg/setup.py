import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-Python install; kernels fall back at import
    cythonize = None

ext_modules = []
if cythonize is not None and os.environ.get("BIRGEN_NO_EXT") != "1":
    extensions = [
        Extension(
            f"birgen._kernels.{name}",
            [f"src/birgen/_kernels/{name}.pyx"],
            include_dirs=[np.get_include()],
            language="c++",
            extra_compile_args=["-O3"],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        )
        for name in ("qem", "trace")
        if os.path.exists(f"src/birgen/_kernels/{name}.pyx")
    ]
    ext_modules = cythonize(extensions, compiler_directives={"language_level": "3"})

setup(ext_modules=ext_modules)
