import os

from Cython.Build import cythonize
from setuptools import Extension, setup

compile_args = ["-O3", "-fopenmp"]
if os.environ.get("BITWAVE_NATIVE", "1") == "1":
    compile_args.append("-march=native")

extensions = [
    Extension(
        "bitwave.bitkernel._ckernels",
        ["src/bitwave/bitkernel/_ckernels.pyx"],
        include_dirs=["src/bitwave/bitkernel"],
        depends=["src/bitwave/bitkernel/bitops.h"],
        extra_compile_args=compile_args,
        extra_link_args=["-fopenmp"],
    )
]

setup(
    ext_modules=cythonize(
        extensions,
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )
)
