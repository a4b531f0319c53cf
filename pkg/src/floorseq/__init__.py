"""floorseq: floor plans as line-segment token sequences.

Canonicalizes floor-plan geometry into token sequences, fits an
autoregressive attention decoder over them (optionally conditioned on
rasterized partial maps), and evaluates generation, completion, and
shortest-path prediction under partial observability.
"""

__version__ = "0.1.0"
