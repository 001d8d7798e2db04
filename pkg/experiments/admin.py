"""
Module for registration of the experiments models
"""

from django.contrib import admin

from experiments.models import Experiment, MetricsRecord


class MetricsRecordInline(admin.TabularInline):
    model = MetricsRecord
    fields = ('policy', 'horizon', 'mse', 'relative_regret_pct', 'coverage', 'failure')
    readonly_fields = fields
    extra = 0
    can_delete = False


@admin.register(Experiment)
class ExperimentAdmin(admin.ModelAdmin):
    list_display = ('name', 'family', 'mode', 'num_runs', 'seed', 'status', 'created_at')
    list_filter = ('status', 'family', 'mode')
    search_fields = ('name',)
    inlines = (MetricsRecordInline,)


@admin.register(MetricsRecord)
class MetricsRecordAdmin(admin.ModelAdmin):
    list_display = ('experiment', 'policy', 'horizon', 'mse', 'relative_regret_pct', 'coverage')
    list_filter = ('policy', 'experiment__family')
