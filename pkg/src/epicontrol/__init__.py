"""Learned reduced epidemic models and their optimal control.

Network-based stochastic simulations are averaged into a training set, a
neural transmission rate closes an SIR-type ODE, and health policies are
optimized on that ODE and checked back on the simulator.
"""
__version__ = "0.1.0"
