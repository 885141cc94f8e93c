"""AMP with sparse variance profiles and Lotka-Volterra equilibria."""

__version__ = "0.1.0"
