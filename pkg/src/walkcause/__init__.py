"""Causal effects of single and joint binary interventions on Likert outcomes."""
__version__ = "0.1.0"
