"""Experiment orchestration: configuration, statistics, experiments and reporting."""
