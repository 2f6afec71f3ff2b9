"""Bayesian signal matching for P300 speller calibration.

A new participant's ERP model borrows target epochs from source
participants whose signals match, selected through binary indicators
sampled jointly with all other parameters.
"""
__version__ = "0.1.0"
