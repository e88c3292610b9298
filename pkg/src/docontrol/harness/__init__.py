"""Experiment harness: configuration, metrics, persistence, runners and the command line."""
