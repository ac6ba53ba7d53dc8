"""Transition-flow generative modeling at desk scale.

Train a transition-flow network on 2D synthetic distributions, sample with arbitrary
step counts (including one step), and verify the underlying identities numerically
against brute-force and closed-form references.
"""

__version__ = "0.1.0"
