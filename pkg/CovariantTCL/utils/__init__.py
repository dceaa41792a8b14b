"""
Utility modules for CovariantTCL
"""
