"""Energy-based physics-informed networks for coupled induction heating design."""

__version__ = "0.1.0"
