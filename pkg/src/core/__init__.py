"""
Reference densities, limit-state problems and the biasing model
"""
