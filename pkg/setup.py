import numpy as np
from setuptools import setup

try:
    from Cython.Build import cythonize
    ext_modules = cythonize(
        "src/cluttergen/_ckernels.pyx",
        compiler_directives={"language_level": "3"},
        quiet=True,
    )
    for ext in ext_modules:
        ext.include_dirs.append(np.get_include())
        ext.extra_compile_args = ["-O3"]
except ImportError:  # fall back to pure Python kernels
    ext_modules = []

setup(ext_modules=ext_modules)
