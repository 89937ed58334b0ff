"""Predictor-based architecture search on tabular benchmarks.

Core pieces: the architecture space and its operators (`space`), the
benchmark oracle (`bench`), the GCN ranking predictor (`predictor`),
candidate-set samplers (`samplers`), the search loop (`search`), the
sample-efficiency calculus (`gain`) and the experiment CLI (`cli`).
"""

__version__ = "0.1.0"

from . import kernels  # noqa: F401  (selects the compiled or numpy backend)
