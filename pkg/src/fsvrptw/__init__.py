"""Greedy annealing-driven route generation for fleet-sizing VRPTW."""
__version__ = "0.1.0"
