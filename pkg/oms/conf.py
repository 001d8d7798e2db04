"""
Library defaults for the oms app.

Values come from the ``OMS`` dict in Django settings and fall back to
``DEFAULTS``. Access them as attributes of ``oms_settings``::

    from oms.conf import oms_settings
    oms_settings.PROPENSITY_CLAMP

Settings are read on every access, so ``override_settings(OMS=...)`` takes
effect immediately.
"""

from pathlib import Path

from django.conf import settings

DEFAULTS = {
    'THETA_BOUND': 50.0,
    'PROPENSITY_CLAMP': 0.01,
    'RIDGE': 1e-8,
    'RIDGE_LAMBDA': 1e-3,
    'RFF_FEATURES': 100,
    'RFF_BANDWIDTH': 1.0,
    'REFIT_EVERY': 100,
    'SINGULAR_CONDITION': 1e12,
    'RESOLUTION': 0.001,
    'COARSE_GRID': 0.01,
    'GN_MAX_ITER': 200,
    'GN_STEP_TOL': 1e-10,
    'PG_STEPS': 50,
    'ALPHA': 0.05,
    'CHECKPOINT_EVERY': 100,
    'MC_SAMPLES': 10 ** 6,
    'BOOTSTRAP_RESAMPLES': 1000,
    'NUM_RUNS': 500,
    'HORIZONS': [100, 1000, 10000],
    'RESULTS_DIR': Path('results'),
}


class OMSSettings:
    """
    Attribute access to the ``OMS`` settings dict with defaults.
    """

    def __init__(self, defaults=None):
        self.defaults = defaults or DEFAULTS

    @property
    def user_settings(self):
        return getattr(settings, 'OMS', {}) or {}

    def __getattr__(self, attr):
        if attr not in self.defaults:
            raise AttributeError(f"Invalid OMS setting: '{attr}'")
        return self.user_settings.get(attr, self.defaults[attr])

    def resolve(self, value, attr):
        """
        Return ``value`` unless it is None, else the setting named ``attr``.
        """
        return getattr(self, attr) if value is None else value


oms_settings = OMSSettings(DEFAULTS)
