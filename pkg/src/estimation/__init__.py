"""
Estimators, lengthscale tuning and diagnostics
"""
