"""
CovariantTCL - exact convolutionless reduced-density-operator solver
"""

__version__ = "1.0.0"
__author__ = "CovariantTCL Team"
__description__ = "Projection-operator reduced dynamics on finite system+environment models"
