"""Datasets, hyperparameter search and the experiment runners."""
