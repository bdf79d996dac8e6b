"""ranbench: benchmark offline black-box optimizers (Parzen-estimator, grid,
random) against an online actor-critic agent on LTE cell transmit-power
tuning, over a lightweight deterministic downlink simulator."""

from . import bench, envproto, optimizer, ransim, rlagent, scoring, study

__all__ = ["ransim", "scoring", "envproto", "optimizer", "study", "rlagent",
           "bench"]

__version__ = "0.1.0"
