"""
Test suite for the GAMPI causal discovery pipeline
"""
