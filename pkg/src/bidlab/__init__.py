"""bidlab: a desk-scale lab for budget-constrained second-price bidding.

Replays auction logs under generalized-second-price settlement with
slot-based budget pacing, calibrates static bidding strategies, and trains
a maximum-entropy actor-critic agent that nudges a linear bidder's price
per impression.
"""

__version__ = "0.1.0"

from bidlab.logstore import DatasetStats, Episode, Impression, SynthSpec
from bidlab.reports import EpisodeReport

__all__ = [
    "DatasetStats",
    "Episode",
    "EpisodeReport",
    "Impression",
    "SynthSpec",
    "__version__",
]
