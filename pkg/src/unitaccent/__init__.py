"""unitaccent: foreign-accent simulation via cross-language unit
quantization, plus the evaluation suite and a synthetic-language harness."""

__version__ = "0.1.0"

from .errors import (
    BadMagicError,
    FormatError,
    TruncatedFileError,
    UnitAccentError,
    ValidationError,
)
from .featio import FeatureMatrix, Manifest, PosteriorSet, TokenSequence
from .quantizer import Codebook, KMeansConfig, assign, inertia, quantize, train_codebook
from .reconstructor import decode_centroid
from .unitops import DedupUnitSequence, UnitSequence, dedup, expand, from_chars, to_chars
