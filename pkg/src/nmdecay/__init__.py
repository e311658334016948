"""Non-Markovian decay of a local excitation in tight-binding environments."""
__version__ = "0.1.0"
