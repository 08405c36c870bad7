"""goct: rhythm-game chart generation.

Tempo-aware chart model and formats (chartcore), chart token codec
(tokencodec), beat-aligned log-Mel features (featureext), an
encoder-decoder transformer with training and constrained generation
(nnmodel), evaluation metrics (evalkit), and the dataset pipeline
(datasetpipe).  `goct.estimators` exposes sklearn-style wrappers.
"""

from goct.errors import (
    FormatError,
    GoctError,
    GrammarError,
    ImportRejection,
    ParseError,
    TrainingDiverged,
    ValidationError,
)

__version__ = "0.1.0"

__all__ = [
    "FormatError",
    "GoctError",
    "GrammarError",
    "ImportRejection",
    "ParseError",
    "TrainingDiverged",
    "ValidationError",
    "__version__",
]
