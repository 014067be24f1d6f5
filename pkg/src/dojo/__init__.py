"""Differentiable rigid-body simulation with hard contact solved by a primal-dual interior-point method."""
import jax

jax.config.update("jax_enable_x64", True)

__version__ = "0.1.0"
