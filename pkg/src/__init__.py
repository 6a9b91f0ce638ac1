"""
otprop - optimal-transport ambiguity sets: exact discrete OT, propagation
of ambiguity sets through maps and dynamical systems, and distributionally
robust CVaR trajectory planning.
"""

__version__ = "1.0.0"
