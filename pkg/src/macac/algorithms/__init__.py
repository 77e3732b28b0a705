from .learners import (
    ALGORITHMS,
    CRITIC_INPUTS,
    EnvInfo,
    Learner,
    LearnerConfig,
    MacCAC,
    MacIAC,
    MacIAICC,
    NaiveMacIACC,
    PrimitiveIAC,
    make_learner,
)
from .policies import CentralizedPolicy, DecentralizedPolicy, joint_input, local_input
from .targets import actor_loss, n_step_targets, td_targets

__all__ = [
    "ALGORITHMS", "CRITIC_INPUTS", "EnvInfo", "Learner", "LearnerConfig", "MacCAC", "MacIAC",
    "MacIAICC", "NaiveMacIACC", "PrimitiveIAC", "make_learner", "CentralizedPolicy",
    "DecentralizedPolicy", "joint_input", "local_input", "actor_loss", "n_step_targets", "td_targets",
]
