"""Exponential perturbative expansions for linear time-dependent systems."""
