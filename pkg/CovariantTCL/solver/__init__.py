"""
Numerical modules for CovariantTCL
"""
