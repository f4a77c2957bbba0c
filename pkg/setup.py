import numpy as np
from setuptools import Extension, setup
from Cython.Build import cythonize

# -ffp-contract=off: the tape kernels and the recordless forward kernels must
# produce bit-identical values, which FMA contraction would silently break.
extensions = [
    Extension(
        "diffdrive._tapecore",
        ["src/diffdrive/_tapecore.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=["-O3", "-ffp-contract=off"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
]

setup(ext_modules=cythonize(extensions, language_level=3))
