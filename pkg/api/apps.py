"""
Configuration module for the 'api' app: the read-only HTTP view of stored
experiments and the oracle computation endpoint.
"""

from django.apps import AppConfig


class ApiConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'api'
