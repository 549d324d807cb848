"""Automated model-merging search toolkit.

Merges architecture-compatible checkpoints under explicit recipes (layer-wise
fusion, depth-wise integration, scale-factor search) and discovers good
recipes with a multi-fidelity, single- and multi-objective optimizer.
"""

__version__ = "0.1.0"

from .store import (  # noqa: F401
    ComponentClass,
    StoreFormatError,
    TensorRecord,
    WeightStore,
    classify_parameter,
    load_store,
    save_store,
)
