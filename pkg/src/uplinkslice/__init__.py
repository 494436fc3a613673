"""Uplink slicing between grant-free URLLC and grant-based eMBB traffic.

Modules:

- ``reliability``: failure probability of a URLLC packet under randomized
  persistent retransmission (closed form, light traffic, Monte Carlo).
- ``game``: the region-sizing game and its pure Nash equilibria.
- ``allocator``: variance-minimizing water-filling grants and baselines.
- ``simulator``: frame-by-frame simulation of the whole uplink.
- ``cli``: sweeps, seeds and CSV output for all of the above.
"""

__version__ = "0.1.0"
