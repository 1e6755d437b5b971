import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

if cythonize is not None:
    ext_modules = cythonize(
        [
            Extension(
                "torusflow._accel",
                ["src/torusflow/_accel.pyx"],
                extra_compile_args=["-O3"],
                include_dirs=[numpy.get_include()],
            )
        ],
        language_level=3,
    )
else:
    # pure-Python fallback in torusflow._fallback is used at runtime
    ext_modules = []

setup(ext_modules=ext_modules)
