"""
Shared behaviour of the experiments management commands.

Exit codes: 0 on success, 1 for configuration and usage errors, 2 for any
other failure.
"""

import logging
import sys

from django.core.management.base import BaseCommand, CommandError
from rest_framework.exceptions import ValidationError

from oms.exceptions import ConfigurationError

logger = logging.getLogger('experiments')


def format_validation_error(detail, prefix=''):
    """Flatten DRF error details into 'path: message' lines."""
    if isinstance(detail, dict):
        lines = []
        for key, value in detail.items():
            lines.extend(format_validation_error(value, f"{prefix}{key}." if key != 'non_field_errors' else prefix))
        return lines
    if isinstance(detail, list):
        lines = []
        for index, value in enumerate(detail):
            nested = isinstance(value, (dict, list))
            lines.extend(format_validation_error(value, f"{prefix}{index}." if nested else prefix))
        return lines
    return [f"{prefix.rstrip('.')}: {detail}" if prefix else str(detail)]


class OMSCommand(BaseCommand):
    """
    Base command mapping library errors to exit codes. Subclasses implement
    ``run_command(**options)``.
    """

    def run_from_argv(self, argv):
        self._called_from_command_line = True
        parser = self.create_parser(argv[0], argv[1])
        try:
            parser.parse_args(argv[2:])
        except SystemExit as exc:
            sys.exit(1 if exc.code else 0)
        super().run_from_argv(argv)

    def handle(self, *args, **options):
        try:
            self.run_command(**options)
        except CommandError:
            raise
        except ValidationError as exc:
            raise CommandError('\n'.join(format_validation_error(exc.detail)), returncode=1)
        except ConfigurationError as exc:
            raise CommandError(str(exc), returncode=1)
        except Exception as exc:
            logger.exception('%s failed.', self.__module__.rsplit('.', 1)[-1])
            raise CommandError(f"{type(exc).__name__}: {exc}", returncode=2)

    def run_command(self, **options):
        raise NotImplementedError

    def success(self, message):
        self.stdout.write(self.style.SUCCESS(message))
