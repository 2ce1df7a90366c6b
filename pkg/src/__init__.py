"""
Stackelberg demand-response market - a day-ahead DSO/prosumer equilibrium solver.
"""

__version__ = "0.1.0"
