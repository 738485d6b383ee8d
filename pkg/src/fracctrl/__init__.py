"""Open-loop control synthesis for semilinear Caputo sub-diffusion systems."""

__version__ = "0.1.0"
