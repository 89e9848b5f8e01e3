"""
qsalign: preference alignment for query suggestion on a simulated click log.

Probabilistic reward models, rule and rubric rewards, two-stage reward
fusion and GRPO / RFT policy optimisation, evaluated against a synthetic
click model with positional bias and distribution shift.
"""
__version__ = "0.1.0"
