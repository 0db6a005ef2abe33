import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

# no -ffast-math: the kernels rely on isfinite and IEEE comparisons
extensions = [
    Extension(
        "opinion_nash._ckernels",
        ["src/opinion_nash/_ckernels.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O2"],
    )
]

setup(ext_modules=cythonize(extensions, compiler_directives={"language_level": "3"}))
