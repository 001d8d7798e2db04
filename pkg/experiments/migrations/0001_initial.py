# Generated by Django 4.1.7 on 2026-10-18 10:12

import django.core.validators
from django.db import migrations, models
import django.db.models.deletion


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='Experiment',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('name', models.CharField(max_length=120)),
                ('family', models.CharField(max_length=80)),
                ('mode', models.CharField(default='horizon', max_length=10)),
                ('seed', models.PositiveBigIntegerField(default=0)),
                ('num_runs', models.PositiveIntegerField(validators=[django.core.validators.MinValueValidator(1)])),
                ('config', models.JSONField(default=dict)),
                ('status', models.CharField(choices=[('running', 'Running'), ('finished', 'Finished'), ('failed', 'Failed')], default='running', max_length=10)),
                ('created_at', models.DateTimeField(auto_now_add=True)),
                ('finished_at', models.DateTimeField(blank=True, null=True)),
            ],
            options={
                'db_table': 'Experiment',
                'ordering': ('-created_at',),
            },
        ),
        migrations.CreateModel(
            name='MetricsRecord',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('policy', models.CharField(max_length=80)),
                ('scenario', models.CharField(max_length=80)),
                ('mode', models.CharField(default='horizon', max_length=10)),
                ('horizon', models.FloatField()),
                ('num_runs', models.PositiveIntegerField()),
                ('mse', models.FloatField(null=True)),
                ('mse_low', models.FloatField(null=True)),
                ('mse_high', models.FloatField(null=True)),
                ('scaled_mse', models.FloatField(null=True)),
                ('relative_regret_pct', models.FloatField(null=True)),
                ('relative_regret_low', models.FloatField(null=True)),
                ('relative_regret_high', models.FloatField(null=True)),
                ('coverage', models.FloatField(null=True)),
                ('coverage_low', models.FloatField(null=True)),
                ('coverage_high', models.FloatField(null=True)),
                ('confseq_coverage', models.FloatField(null=True)),
                ('mean_ci_size', models.FloatField(null=True)),
                ('mean_ci_size_low', models.FloatField(null=True)),
                ('mean_ci_size_high', models.FloatField(null=True)),
                ('mean_confseq_size', models.FloatField(null=True)),
                ('kappa_mean', models.JSONField(default=list)),
                ('kappa_std', models.JSONField(default=list)),
                ('flags', models.JSONField(default=dict)),
                ('failure', models.TextField(blank=True)),
                ('experiment', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='metrics', to='experiments.experiment')),
            ],
            options={
                'db_table': 'MetricsRecord',
                'ordering': ('experiment', 'policy', 'horizon'),
                'unique_together': {('experiment', 'policy', 'horizon')},
            },
        ),
    ]
