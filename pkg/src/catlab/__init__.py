"""Simulation lab for learners that avoid catastrophe by asking a mentor for help."""

from catlab.core import QUERY, ExtendedReal, RegretReport, StepRecord, regret_additive, regret_multiplicative

__all__ = ["QUERY", "ExtendedReal", "RegretReport", "StepRecord", "regret_additive", "regret_multiplicative"]
__version__ = "0.1.0"
