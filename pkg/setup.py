"""Build the optional compiled kernels.

If Cython or a compiler is unavailable the package still installs and falls
back to the NumPy kernels at import time.
"""
import sys

from setuptools import setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "gazemask._ckernels",
                ["src/gazemask/_ckernels.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3", "-ffast-math", "-march=native"],
                libraries=["mvec", "m"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError as exc:  # pragma: no cover
    print(f"gazemask: building without compiled kernels ({exc})", file=sys.stderr)

setup(ext_modules=ext_modules)
