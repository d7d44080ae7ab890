"""Multi-agent DQN traffic-signal control with a spill-back aware
parameter update strategy."""

from .learners import (CentralizedDQN, CooperativeDQN, DPUSLearner, IndependentDQN,
                       TrainConfig, evaluate, train_co_dqn, train_cen_dqn, train_dpus,
                       train_in_dqn)
from .sim import CorridorConfig

__all__ = [
    "CentralizedDQN", "CooperativeDQN", "CorridorConfig", "DPUSLearner", "IndependentDQN",
    "TrainConfig", "evaluate", "train_cen_dqn", "train_co_dqn", "train_dpus", "train_in_dqn",
]
__version__ = "0.1.0"
