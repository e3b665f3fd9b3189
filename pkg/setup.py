import os

import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

# no fused multiply-add: keeps compiled and pure-Python arithmetic bit-identical
extra = ["-O2", "-ffp-contract=off"] if os.name != "nt" else []

ext = Extension(
    "gwspine._core",
    ["src/gwspine/_core.pyx"],
    include_dirs=[np.get_include()],
    extra_compile_args=extra,
    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
)

setup(ext_modules=cythonize([ext], compiler_directives={"language_level": "3"}))
