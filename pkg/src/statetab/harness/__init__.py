"""Experiment configuration, protocols, benchmarks and the command-line front end."""
