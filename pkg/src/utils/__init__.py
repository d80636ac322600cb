"""
Shared utilities: RNG streams, errors and the worker pool
"""
