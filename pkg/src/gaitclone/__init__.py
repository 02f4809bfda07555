"""Desk-scale biped locomotion workbench.

A 1 kHz point-mass biped simulator, a step-adaptive planner that chooses
footstep location and timing with a small convex QP, a behavioral-cloning
pipeline producing three policies that differ only in goal conditioning
(contact, two-contact, velocity+gait), and an evaluation harness measuring
failure rate, survival time, velocity tracking and contact tracking.
"""

__version__ = "0.1.0"
