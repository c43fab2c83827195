"""Simulated quantum link whose control traffic runs through match-action pipelines."""
