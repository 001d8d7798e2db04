"""
Online Moment Selection: adaptive data collection across multiple data sources
for semiparametric GMM estimation of a scalar target parameter.
"""
