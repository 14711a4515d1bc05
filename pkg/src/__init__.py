"""
trajkit
A desk-scale toolkit for training hybrid residual/compound-scaled networks
that predict multi-modal future trajectories from rasterized driving scenes.
"""

__version__ = "0.1.0"
