"""Fundamental frequency of inharmonic signals: definitions, estimators, bounds and Monte Carlo studies"""
