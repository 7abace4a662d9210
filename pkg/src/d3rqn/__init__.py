"""Recurrent deep Q-learning lab: D3RQN agent, exploration strategies, toy road world."""

__version__ = "0.1.0"
