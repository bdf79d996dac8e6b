"""Actor-critic agent over the power-tuning environment: a fixed two-head MLP
with hand-written reverse-mode gradients, GAE, A2C/PPO updates, and the
training/evaluation loops."""

from .policy import (PolicyArch, init_params, forward, greedy_actions,
                     load_checkpoint, log_softmax, sample_actions,
                     save_checkpoint, softmax)
from .algo import (HyperParams, RolloutBuffer, a2c_update, gae, ppo_update,
                   Adam, RMSProp, make_optimizer)
from .training import EvalTrial, TrainResult, evaluate, train

__all__ = [
    "PolicyArch", "HyperParams", "RolloutBuffer", "TrainResult", "EvalTrial",
    "init_params", "forward", "log_softmax", "softmax", "sample_actions",
    "greedy_actions", "save_checkpoint", "load_checkpoint", "gae",
    "ppo_update", "a2c_update", "Adam", "RMSProp", "make_optimizer",
    "train", "evaluate",
]
