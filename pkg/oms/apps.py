"""
Configuration module for the 'oms' app.

"""

from django.apps import AppConfig


class OmsConfig(AppConfig):
    """
    The numerical library: moment models, data sources, nuisance estimators,
    the two-step GMM estimator, variance surfaces, allocation geometry,
    data-collection policies and confidence statements.
    """
    name = 'oms'
    verbose_name = 'Online moment selection'
