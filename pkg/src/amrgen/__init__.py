"""AMR-to-text generation with a cache transition system.

The package turns rooted, labeled AMR graphs back into sentences by running a
cache transition parser in reverse: an oracle linearizes an aligned graph into
Push/Pop actions with word spans, and two LSTM decoders with hard attention
learn to reproduce those traces.
"""

__version__ = "0.1.0"

from .graphs import AmrGraph, MalformedPenman, parse_penman, preprocess_labels, serialize

__all__ = [
    "AmrGraph",
    "MalformedPenman",
    "parse_penman",
    "preprocess_labels",
    "serialize",
    "__version__",
]
