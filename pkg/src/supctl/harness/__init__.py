"""Experiment harness: scenario files, generation, Monte Carlo, L2-gain reports, CLI."""
