"""
U-Statistics Ergodic Laboratory

Exact counterexamples and Monte-Carlo checks for ergodic theorems of order-2 U-statistics.
"""

__version__ = "0.1.0"
