"""Observational ATE estimation with backdoor adjustment and refutation tests."""
