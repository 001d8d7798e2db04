from django.contrib.auth.models import User
from django.urls import reverse
from rest_framework import status
from rest_framework.test import APITestCase

from experiments.models import Experiment, MetricsRecord


class StoredResultsTests(APITestCase):

    @classmethod
    def setUpTestData(cls):
        cls.experiment = Experiment.objects.create(
            name='late-grid', family='two_sample_late', seed=3, num_runs=20,
            config={'name': 'late-grid'}, status=Experiment.FINISHED,
        )
        other = Experiment.objects.create(name='neyman', family='neyman_allocation', num_runs=5)
        for policy, horizon, mse in [('oracle', 100, 0.04), ('oracle', 400, 0.01),
                                     ('etg', 100, 0.05), ('etg', 400, 0.011)]:
            MetricsRecord.objects.create(
                experiment=cls.experiment, policy=policy, scenario='two_sample_late', horizon=horizon,
                num_runs=20, mse=mse, relative_regret_pct=None if policy == 'oracle' else 10.0,
                kappa_mean=[0.3, 0.7], kappa_std=[0.01, 0.01],
            )
        MetricsRecord.objects.create(experiment=other, policy='etc', scenario='neyman_allocation', horizon=100,
                                     num_runs=5, failure='Scenario has no true target.')

    def test_experiment_list(self):
        response = self.client.get(reverse('experiment-list'))
        self.assertEqual(response.status_code, status.HTTP_200_OK)
        self.assertEqual(response.data['count'], 2)

    def test_experiment_detail_nests_metrics(self):
        response = self.client.get(reverse('experiment-detail', args=[self.experiment.pk]))
        self.assertEqual(response.status_code, status.HTTP_200_OK)
        self.assertEqual(response.data['status'], Experiment.FINISHED)
        self.assertEqual(len(response.data['metrics']), 4)
        self.assertEqual(response.data['metrics'][0]['kappa_mean'], [0.3, 0.7])

    def test_metrics_filter(self):
        response = self.client.get(reverse('metricsrecord-list'),
                                   {'experiment': self.experiment.pk, 'policy': 'etg', 'ordering': '-horizon'})
        self.assertEqual(response.status_code, status.HTTP_200_OK)
        self.assertEqual([row['horizon'] for row in response.data['results']], [400.0, 100.0])

    def test_metrics_horizon_and_failures(self):
        response = self.client.get(reverse('metricsrecord-list'), {'horizon': 100})
        self.assertEqual(response.data['count'], 3)
        response = self.client.get(reverse('metricsrecord-list'), {'failed': 'true'})
        self.assertEqual([row['policy'] for row in response.data['results']], ['etc'])

    def test_writes_are_refused(self):
        admin = User.objects.create_superuser('admin', 'admin@example.com', 'secret')
        self.client.force_authenticate(admin)
        response = self.client.delete(reverse('experiment-detail', args=[self.experiment.pk]))
        self.assertIn(response.status_code, (status.HTTP_403_FORBIDDEN, status.HTTP_405_METHOD_NOT_ALLOWED))
        response = self.client.post(reverse('experiment-list'), {'name': 'x'}, format='json')
        self.assertIn(response.status_code, (status.HTTP_403_FORBIDDEN, status.HTTP_405_METHOD_NOT_ALLOWED))
        self.assertEqual(Experiment.objects.count(), 2)


class OracleViewTests(APITestCase):

    def test_neyman(self):
        response = self.client.post(reverse('oracle'), {'family': 'neyman', 'params': {'sigma1': 2, 'sigma0': 1}},
                                    format='json')
        self.assertEqual(response.status_code, status.HTTP_200_OK)
        self.assertAlmostEqual(response.data['kappa_star'][0], 2 / 3, places=3)
        self.assertAlmostEqual(response.data['v_star'], 9.0, places=2)

    def test_cost_weighted(self):
        response = self.client.post(
            reverse('oracle'),
            {'family': 'neyman', 'params': {'sigma1': 2, 'sigma0': 1}, 'cost': [4, 1], 'cost_weighted': True},
            format='json')
        self.assertEqual(response.status_code, status.HTTP_200_OK)
        self.assertAlmostEqual(response.data['kappa_star'][0], 0.5, places=3)

    def test_invalid_document(self):
        response = self.client.post(reverse('oracle'), {'family': 'neyman', 'cost': [1, -1]}, format='json')
        self.assertEqual(response.status_code, status.HTTP_400_BAD_REQUEST)
        self.assertIn('cost', response.data)

    def test_replay_has_no_oracle(self):
        response = self.client.post(reverse('oracle'), {'family': 'replay'}, format='json')
        self.assertEqual(response.status_code, status.HTTP_400_BAD_REQUEST)

    def test_array_body(self):
        response = self.client.post(reverse('oracle'), [1, 2], format='json')
        self.assertEqual(response.status_code, status.HTTP_400_BAD_REQUEST)
