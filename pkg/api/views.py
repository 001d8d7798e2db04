"""
This module defines the view classes for handling HTTP requests in the API.
"""

import logging

from django_filters.rest_framework import DjangoFilterBackend
from rest_framework import filters
from rest_framework import status
from rest_framework.response import Response
from rest_framework.views import APIView
from rest_framework.viewsets import ReadOnlyModelViewSet

from api.filters import MetricsRecordFilter
from api.permissions import ReadOnlyOrOraclePermission
from experiments.management.commands.oracle import compute_oracle
from experiments.models import Experiment, MetricsRecord
from experiments.serializers import ExperimentSerializer, MetricsRecordListSerializer
from oms.exceptions import ConfigurationError

logger = logging.getLogger(__name__)

ORACLE_OPTIONS = ('cost_weighted', 'resolution', 'mc_samples')


class ExperimentViewSet(ReadOnlyModelViewSet):
    """
    Stored experiments with their nested metrics tables.

    Experiments are written by the `run` and `replay` commands with `--store`;
    the API only lists and retrieves them.

    Attributes:
        queryset: Experiments with their metrics rows prefetched.
        search_fields: `?search=` matches the experiment name or scenario family.
        ordering_fields: `?ordering=` accepts `created_at` and `name`.
    """

    queryset = Experiment.objects.prefetch_related('metrics')
    serializer_class = ExperimentSerializer
    permission_classes = [ReadOnlyOrOraclePermission]
    filter_backends = (filters.SearchFilter, filters.OrderingFilter)
    search_fields = ['name', 'family']
    ordering_fields = ['created_at', 'name']


class MetricsRecordViewSet(ReadOnlyModelViewSet):
    """
    Metrics rows of every stored experiment.

    Attributes:
        filterset_class: ``experiment``, ``policy``, ``scenario``, ``mode``,
            ``horizon`` and horizon range filters.
        ordering_fields: Rows may be ordered by horizon, MSE or relative regret.
    """

    queryset = MetricsRecord.objects.select_related('experiment')
    serializer_class = MetricsRecordListSerializer
    permission_classes = [ReadOnlyOrOraclePermission]
    filter_backends = (DjangoFilterBackend, filters.OrderingFilter)
    filterset_class = MetricsRecordFilter
    ordering_fields = ['horizon', 'mse', 'relative_regret_pct']


class OracleView(APIView):
    """
    Oracle allocation of a posted scenario document.

    The body is a scenario document, optionally carrying ``cost_weighted``,
    ``resolution`` and ``mc_samples``. Responds with ``kappa_star`` and
    ``v_star``; an invalid document gets HTTP 400 with the field errors.
    """

    permission_classes = [ReadOnlyOrOraclePermission]
    computes_only = True

    def post(self, request):
        """
        Computes the oracle allocation of the posted scenario.

        Args:
            request: The request whose JSON body is a scenario document plus
                optional `cost_weighted`, `resolution` and `mc_samples`.

        Returns:
            Response: `{"kappa_star": [...], "v_star": ...}`, or HTTP 400 with
            a `detail` message when the document or an option is invalid.
        """
        if not isinstance(request.data, dict):
            return Response({'detail': 'A scenario document must be a JSON object.'},
                            status=status.HTTP_400_BAD_REQUEST)
        document = dict(request.data)
        options = {name: document.pop(name) for name in ORACLE_OPTIONS if name in document}
        try:
            kappa, variance = compute_oracle(document, **options)
        except ConfigurationError as exc:
            return Response({'detail': str(exc)}, status=status.HTTP_400_BAD_REQUEST)
        except (TypeError, ValueError) as exc:
            logger.warning('Rejected oracle request: %s', exc)
            return Response({'detail': f'Invalid oracle options: {exc}'}, status=status.HTTP_400_BAD_REQUEST)
        return Response({'kappa_star': [float(value) for value in kappa], 'v_star': float(variance)})
