"""zerocurrent: simulation and verification lab for zero sets of random
entire functions built from a holomorphic map and a perturbation family."""

__version__ = "0.1.0"
