"""Learning rigid-body contact dynamics at varying contact stiffness.

A small from-scratch toolkit: a compliant-contact cube simulator, a 1-D
falling-mass benchmark, a noisy trajectory pipeline, numpy MLP/GRU velocity
predictors, training and sweeps, and evaluation against the simulator oracle.
"""

__version__ = "0.1.0"
