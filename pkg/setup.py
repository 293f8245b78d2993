import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
    extensions = cythonize(
        [
            Extension(
                "nullwaves._march",
                ["src/nullwaves/_march.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except ImportError:
    # Pure-python fallback is selected at import time; the extension is optional.
    extensions = []

for ext in extensions:
    ext.optional = True

setup(ext_modules=extensions)
