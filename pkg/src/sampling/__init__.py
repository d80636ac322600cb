"""
Samplers for the biasing density
"""
