from d3rqn.nnet.network import backward, dueling_combine, forward, forward_trace, lstm_step, masked_loss
from d3rqn.nnet.optim import Adam, soft_update
from d3rqn.nnet.params import NetworkConfig, ParamSet, RecurrentState

__all__ = [
    "Adam",
    "NetworkConfig",
    "ParamSet",
    "RecurrentState",
    "backward",
    "dueling_combine",
    "forward",
    "forward_trace",
    "lstm_step",
    "masked_loss",
    "soft_update",
]
