"""
Filter sets for the metrics endpoint.

- MetricsRecordFilter: metrics rows by experiment, policy, scenario and horizon range.
"""

from django_filters import rest_framework as filters

from experiments.models import MetricsRecord


class MetricsRecordFilter(filters.FilterSet):
    """
    Filters metrics rows.

    ``horizon`` matches exactly, ``horizon_min`` / ``horizon_max`` bound it.
    """

    policy = filters.CharFilter(field_name='policy')
    scenario = filters.CharFilter(field_name='scenario')
    horizon = filters.NumberFilter(field_name='horizon')
    horizon_min = filters.NumberFilter(field_name='horizon', lookup_expr='gte')
    horizon_max = filters.NumberFilter(field_name='horizon', lookup_expr='lte')
    failed = filters.BooleanFilter(method='filter_failed')

    class Meta:
        model = MetricsRecord
        fields = ['experiment', 'policy', 'scenario', 'mode', 'horizon']

    def filter_failed(self, queryset, name, value):
        if value:
            return queryset.exclude(failure='')
        return queryset.filter(failure='')
