"""Simulator for secure multi-party quantum summation over d-level systems."""
