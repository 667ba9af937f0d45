from .base_agent import BaseAgent
from .q_learning_agent import QLearningAgent, QTable
from .random_agent import RandomAgent

__all__ = ['BaseAgent', 'QLearningAgent', 'QTable', 'RandomAgent']
