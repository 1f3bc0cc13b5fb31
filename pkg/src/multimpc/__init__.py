"""Multi-model NMPC motion planning for a simulated mobile manipulator.

A learned policy reactively selects the robot model (base / arm /
whole-body), constraint set, and target for an SLQ trajectory optimizer;
includes a whole-body baseline and a seeded evaluation harness.
"""

__version__ = "0.1.0"
