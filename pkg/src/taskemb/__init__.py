"""Task embeddings for goal-based RL environments.

Learns fixed-dimensional task representations from the success statistics of
a diverse agent population, and evaluates them on performance-prediction and
task-selection benchmarks.
"""

__version__ = "0.1.0"
