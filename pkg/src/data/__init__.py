"""
Run configuration loading and result writers
"""
