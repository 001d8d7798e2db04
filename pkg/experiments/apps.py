"""
Configuration of the experiments app: the Monte Carlo harness, its
management commands and persisted results.
"""

from django.apps import AppConfig


class ExperimentsConfig(AppConfig):
    """
    The ExperimentsConfig class configures the experiments app.
    """
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'experiments'
