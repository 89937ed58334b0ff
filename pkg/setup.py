"""Build script: compiles the optional Cython kernel extension.

The package works without the extension (pure-numpy fallback in
pbnas._gcn_np); building it just makes the GCN inner loops faster.
"""

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

ext_modules = []
if cythonize is not None:
    ext_modules = cythonize(
        [
            Extension(
                "pbnas._gcn_cy",
                ["src/pbnas/_gcn_cy.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)
