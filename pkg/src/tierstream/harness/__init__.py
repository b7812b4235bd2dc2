"""Evaluation harness: synthetic data, experiment drivers and the CLI."""
