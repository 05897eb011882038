"""Experiment harness: datasets, config files, runner and CLI."""
