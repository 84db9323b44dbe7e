"""
QCS Simulator Package

This package simulates asynchronous quantum clock synchronization: noisy Bell
pairs with unknown basis/time-offset phases are purified with random bilateral
rotations and then consumed by the clock synchronization protocol.
"""

__version__ = "0.1.0"
