"""Self-supervised magnitude-regression pretraining and transfer benchmarks."""

__version__ = "0.1.0"

from . import catalog, evaluator, netspec, synthgen, trainer  # noqa: E402,F401
