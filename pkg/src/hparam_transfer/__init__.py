"""Transferable hyperparameter prediction for variational image denoisers."""

__version__ = "0.1.0"
