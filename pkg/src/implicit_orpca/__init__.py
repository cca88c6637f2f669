"""Online robust PCA driven by implicit regularization."""

__version__ = "0.1.0"

from .model import (  # noqa: E402
    ConfigError,
    DivergenceError,
    EngineConfig,
    ExplicitParams,
    ImplicitHyperParams,
    SubspaceState,
    derive_basis,
    fidelity_loss,
)
from .orpca_engine import ORPCAEngine, OnlineRobustPCA, run_stream  # noqa: E402
from .baseline_explicit import ExplicitORPCA, run_explicit_stream  # noqa: E402
from .metrics import explained_variance  # noqa: E402

__all__ = [
    "ConfigError", "DivergenceError", "EngineConfig", "ExplicitParams", "ImplicitHyperParams",
    "SubspaceState", "derive_basis", "fidelity_loss", "ORPCAEngine", "OnlineRobustPCA",
    "run_stream", "ExplicitORPCA", "run_explicit_stream", "explained_variance",
]
