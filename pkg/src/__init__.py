"""
GAMPI causal discovery

Causal discovery for generalized structural equation models with unmeasured
confounders and instrumental variables: fidelity-model fitting, bottom-up
peeling for the causal order and top-down deconfounding for parent-child
effects, with simulation, tuning and evaluation tooling.
"""

__version__ = "1.0.0"
