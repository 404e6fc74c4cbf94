import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

# -ffp-contract=off: no FMA contraction, so the compiled kernels round every
# multiply and add to float32 exactly like the pure-Python fallback does.
# No -ffast-math: NaN/Inf must propagate with IEEE semantics.
extensions = [
    Extension(
        "faultforge._kernels._ops_cy",
        ["src/faultforge/_kernels/_ops_cy.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=["-O3", "-ffp-contract=off"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
]

setup(
    ext_modules=cythonize(
        extensions,
        compiler_directives={"language_level": "3"},
    )
)
