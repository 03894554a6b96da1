"""Forecast body-frame vehicle velocity while the Doppler log is silent.

Synthetic missions, a from-scratch autodiff core, set-attention blocks, the
two-branch forecaster, a moving-average baseline and a batch CLI.
"""

__version__ = "0.1.0"
