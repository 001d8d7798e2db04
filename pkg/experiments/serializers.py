"""
Django REST framework serializers of the experiments app.

Configuration documents are validated field by field and turned into the
library's immutable specs by ``ExperimentConfigSerializer.save()``; per-run
records and persisted results are represented for JSON output and the HTTP API.

Serializers:

ScenarioSerializer: Synthetic family or CSV replay scenario document.
PolicySpecSerializer: One policy of the grid.
NuisanceSerializer, InferenceSerializer: Run options.
ExperimentConfigSerializer: A whole experiment configuration file.
RunRecordSerializer: One seeded run, non-finite values rendered as null.
ExperimentSerializer, MetricsRecordSerializer: Persisted results.
"""

import math
from collections.abc import Mapping

from rest_framework import serializers

from experiments import models
from experiments.config import ExperimentConfig
from oms.conf import oms_settings
from oms.exceptions import ConfigurationError, SchemaError
from oms.inference import InferenceSpec
from oms.nuisance import NUISANCE_KINDS, NuisanceSpec
from oms.policies import COST_AWARE_KINDS, POLICY_KINDS, EpsilonSchedule, PolicySpec
from oms.sources import build_scenario


class StrictSerializer(serializers.Serializer):
    """
    Serializer that rejects keys it does not declare.
    """

    def to_internal_value(self, data):
        if isinstance(data, Mapping):
            unknown = sorted(set(data) - set(self.fields))
            if unknown:
                raise serializers.ValidationError({key: ['Unknown key.'] for key in unknown})
        return super().to_internal_value(data)


def _positive(value):
    if not value > 0:
        raise serializers.ValidationError('Must be strictly positive.')
    return value


class ReplaySourceSerializer(StrictSerializer):
    path = serializers.CharField()
    columns = serializers.ListField(child=serializers.CharField(), required=False)


class TruthSerializer(StrictSerializer):
    beta = serializers.FloatField(required=False, allow_null=True)
    theta = serializers.ListField(child=serializers.FloatField(), required=False, allow_null=True)
    kappa_star = serializers.ListField(child=serializers.FloatField(), required=False, allow_null=True)
    cost_weighted = serializers.BooleanField(required=False, default=False)


class ScenarioSerializer(StrictSerializer):
    """
    Scenario document. Synthetic families take ``params``; ``family: replay``
    takes ``model``, ``model_options``, ``sources`` (CSV paths in source order)
    and an optional ``truth``.
    """
    family = serializers.CharField()
    name = serializers.CharField(required=False)
    params = serializers.DictField(child=serializers.FloatField(), required=False)
    cost = serializers.ListField(child=serializers.FloatField(), required=False, allow_null=True)
    theta_bound = serializers.FloatField(required=False, allow_null=True, validators=[_positive])
    model = serializers.CharField(required=False)
    model_options = serializers.DictField(required=False)
    sources = ReplaySourceSerializer(many=True, required=False)
    truth = TruthSerializer(required=False, allow_null=True)

    def validate_cost(self, value):
        if value is not None and not all(entry > 0 for entry in value):
            raise serializers.ValidationError('Cost entries must be strictly positive.')
        return value

    def validate(self, data):
        replay_keys = {'model', 'model_options', 'sources', 'truth'} & set(data)
        if data['family'] != 'replay' and replay_keys:
            raise serializers.ValidationError(f"{sorted(replay_keys)} apply to replay scenarios only.")
        if data['family'] == 'replay' and data.get('params'):
            raise serializers.ValidationError('Replay scenarios take no family parameters.')
        try:
            self.scenario = build_scenario(data)
        except SchemaError as exc:
            raise serializers.ValidationError({exc.variable or 'sources': [str(exc)]})
        except ConfigurationError as exc:
            raise serializers.ValidationError(str(exc))
        return data


class EpsilonSerializer(StrictSerializer):
    kind = serializers.ChoiceField(choices=('constant', 'inverse'), default='inverse')
    value = serializers.FloatField(default=1.0)

    def validate(self, data):
        try:
            EpsilonSchedule(**data)
        except ConfigurationError as exc:
            raise serializers.ValidationError(str(exc))
        return data


class PolicySpecSerializer(StrictSerializer):
    kind = serializers.ChoiceField(choices=POLICY_KINDS)
    kappa = serializers.ListField(child=serializers.FloatField(), required=False)
    e = serializers.FloatField(required=False)
    batch = serializers.FloatField(required=False, validators=[_positive])
    epsilon = EpsilonSerializer(required=False)
    label = serializers.CharField(required=False)

    def validate_e(self, value):
        if not 0 < value < 1:
            raise serializers.ValidationError('The exploration fraction must lie in (0, 1).')
        return value

    def validate(self, data):
        try:
            policy_spec(data)
        except ConfigurationError as exc:
            raise serializers.ValidationError(str(exc))
        return data


def policy_spec(data):
    """PolicySpec from a validated policy document."""
    epsilon = data.get('epsilon')
    return PolicySpec(
        kind=data['kind'],
        kappa=tuple(data['kappa']) if data.get('kappa') is not None else None,
        e=data.get('e'),
        batch=data.get('batch'),
        epsilon=EpsilonSchedule(**epsilon) if epsilon else None,
        label=data.get('label'),
    )


class NuisanceSerializer(StrictSerializer):
    kind = serializers.ChoiceField(choices=NUISANCE_KINDS, default='linear')
    refit_every = serializers.CharField(required=False, allow_null=True)
    ridge_lambda = serializers.FloatField(required=False, allow_null=True, min_value=0)
    clamp = serializers.FloatField(required=False, allow_null=True)
    rff_features = serializers.IntegerField(required=False, allow_null=True, min_value=1)
    rff_bandwidth = serializers.FloatField(required=False, allow_null=True, validators=[_positive])

    def validate_refit_every(self, value):
        if value is None or value == 'batch':
            return value
        try:
            every = int(value)
        except ValueError:
            raise serializers.ValidationError("Give a positive number of records or 'batch'.")
        if every < 1:
            raise serializers.ValidationError("Give a positive number of records or 'batch'.")
        return every

    def validate_clamp(self, value):
        if value is not None and not 0 < value < 0.5:
            raise serializers.ValidationError('The propensity clamp must lie in (0, 0.5).')
        return value


class InferenceSerializer(StrictSerializer):
    alpha = serializers.FloatField(required=False, allow_null=True)
    rho = serializers.FloatField(required=False, allow_null=True, validators=[_positive])
    t_opt = serializers.IntegerField(required=False, allow_null=True, min_value=1)
    v_guess = serializers.FloatField(default=1.0, validators=[_positive])

    def validate_alpha(self, value):
        if value is not None and not 0 < value < 1:
            raise serializers.ValidationError('alpha must lie in (0, 1).')
        return value


class OutputSerializer(StrictSerializer):
    metrics = serializers.CharField(default='metrics.csv')
    runs = serializers.CharField(default='runs.json')


class ExperimentConfigSerializer(StrictSerializer):
    """
    Experiment configuration file. Give ``horizons`` (query counts) or
    ``budgets``, not both; without either the ``HORIZONS`` setting is used.
    """
    name = serializers.CharField(default='experiment')
    scenario = ScenarioSerializer()
    policies = PolicySpecSerializer(many=True, allow_empty=False)
    horizons = serializers.ListField(child=serializers.IntegerField(min_value=1), required=False, allow_empty=False)
    budgets = serializers.ListField(
        child=serializers.FloatField(validators=[_positive]), required=False, allow_empty=False)
    num_runs = serializers.IntegerField(required=False, min_value=1)
    seed = serializers.IntegerField(default=0, min_value=0, max_value=2 ** 64 - 1)
    checkpoint_every = serializers.IntegerField(required=False, allow_null=True, min_value=1)
    nuisance = NuisanceSerializer(required=False)
    inference = InferenceSerializer(required=False)
    output = OutputSerializer(required=False)

    def _increasing(self, value):
        if any(later <= earlier for earlier, later in zip(value, value[1:])):
            raise serializers.ValidationError('Values must be strictly increasing.')
        return value

    def validate_horizons(self, value):
        return self._increasing(value)

    def validate_budgets(self, value):
        return self._increasing(value)

    def validate(self, data):
        if 'horizons' in data and 'budgets' in data:
            raise serializers.ValidationError('Give either horizons or budgets, not both.')
        budget_mode = 'budgets' in data
        names = [policy_spec(policy).name for policy in data['policies']]
        duplicates = sorted({name for name in names if names.count(name) > 1})
        if duplicates:
            raise serializers.ValidationError({'policies': [f"Duplicate policy names {duplicates}; add labels."]})
        for policy in data['policies']:
            kind = policy['kind']
            if kind in COST_AWARE_KINDS and not budget_mode:
                raise serializers.ValidationError({'policies': [f"Policy '{kind}' needs budgets."]})
            if kind == 'eps_greedy' and budget_mode:
                raise serializers.ValidationError({'policies': ['Epsilon-greedy runs on horizons only.']})
            if kind in ('etg', 'etg_cs') and policy.get('batch') and not budget_mode:
                for horizon in data.get('horizons') or oms_settings.HORIZONS:
                    e = policy.get('e') or 1 / math.sqrt(horizon)
                    explore = max(1, math.floor(horizon * e + 1e-9))
                    if policy['batch'] > horizon - explore:
                        raise serializers.ValidationError(
                            {'policies': [f"Batch {policy['batch']:g} exceeds the post-exploration horizon of T={horizon}."]})
        built = getattr(self.fields['scenario'], 'scenario', None)
        if built is not None:
            num_sources = built.num_sources
            for policy in data['policies']:
                if policy.get('kappa') is not None and len(policy['kappa']) != num_sources:
                    raise serializers.ValidationError(
                        {'policies': [f"kappa must have {num_sources} entries."]})
        return data

    def create(self, validated_data):
        budget_mode = 'budgets' in validated_data
        nuisance = dict(validated_data.get('nuisance') or {})
        return ExperimentConfig(
            name=validated_data['name'],
            scenario=validated_data['scenario'],
            policies=tuple(policy_spec(policy) for policy in validated_data['policies']),
            limits=tuple(validated_data['budgets'] if budget_mode
                         else validated_data.get('horizons') or oms_settings.HORIZONS),
            mode='budget' if budget_mode else 'horizon',
            num_runs=int(validated_data.get('num_runs') or oms_settings.NUM_RUNS),
            seed=int(validated_data['seed']),
            checkpoint_every=validated_data.get('checkpoint_every'),
            nuisance=NuisanceSpec(**nuisance),
            inference=InferenceSpec(**(validated_data.get('inference') or {})),
            output=dict(validated_data.get('output') or OutputSerializer().to_internal_value({})),
            document=self.initial_data,
        )


class FiniteFloatField(serializers.FloatField):
    """
    Float field representing NaN and infinities as null.
    """

    def to_representation(self, value):
        value = float(value)
        return value if math.isfinite(value) else None


class CheckpointSerializer(serializers.Serializer):
    t = serializers.IntegerField()
    budget_spent = FiniteFloatField()
    kappa = serializers.ListField(child=FiniteFloatField())
    k_hat = serializers.ListField(child=FiniteFloatField(), allow_null=True)
    theta = serializers.ListField(child=FiniteFloatField(), allow_null=True)
    beta = FiniteFloatField(allow_null=True)
    v_hat = FiniteFloatField(allow_null=True)
    ci_low = FiniteFloatField(allow_null=True)
    ci_high = FiniteFloatField(allow_null=True)
    confseq_radius = FiniteFloatField(allow_null=True)
    covered = serializers.BooleanField()
    confseq_covered = serializers.BooleanField()


class RunRecordSerializer(serializers.Serializer):
    policy = serializers.CharField()
    kind = serializers.CharField()
    scenario = serializers.CharField()
    mode = serializers.CharField()
    horizon = FiniteFloatField()
    run = serializers.IntegerField()
    beta_true = FiniteFloatField(allow_null=True)
    beta_hat = FiniteFloatField(allow_null=True)
    squared_error = FiniteFloatField(allow_null=True)
    ci_low = FiniteFloatField(allow_null=True)
    ci_high = FiniteFloatField(allow_null=True)
    ci_size = FiniteFloatField(allow_null=True)
    covered = serializers.BooleanField()
    confseq_radius = FiniteFloatField(allow_null=True)
    confseq_covered = serializers.BooleanField()
    kappa = serializers.ListField(child=FiniteFloatField(), allow_null=True)
    budget_spent = FiniteFloatField(allow_null=True)
    num_queries = serializers.IntegerField()
    flags = serializers.DictField(child=serializers.IntegerField())
    checkpoints = CheckpointSerializer(many=True)
    failure = serializers.CharField(allow_blank=True)


class MetricsRecordSerializer(serializers.ModelSerializer):
    class Meta:
        model = models.MetricsRecord
        exclude = ('experiment',)


class ExperimentSerializer(serializers.ModelSerializer):
    """
    Experiment with its metrics table nested.
    """
    metrics = MetricsRecordSerializer(many=True, read_only=True)

    class Meta:
        model = models.Experiment
        fields = '__all__'


class MetricsRecordListSerializer(serializers.ModelSerializer):
    class Meta:
        model = models.MetricsRecord
        fields = '__all__'

