"""Build script for the compiled chain-dynamics core.

The package works without the extension (a pure-numpy fallback is selected at
import time), so a failed extension build degrades performance, not function.
"""

import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pragma: no cover - cython is a declared build dep
    cythonize = None

extensions = [
    Extension(
        "pushident.chain._speedups",
        ["src/pushident/chain/_speedups.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
    )
]

if cythonize is not None:
    extensions = cythonize(extensions, language_level=3)

setup(ext_modules=extensions)
