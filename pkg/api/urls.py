"""
API application URL Configuration
"""

from django.urls import include, path
from rest_framework import routers

from api.views import ExperimentViewSet, MetricsRecordViewSet, OracleView

router = routers.DefaultRouter()
router.register(r'experiments', ExperimentViewSet)
router.register(r'metrics', MetricsRecordViewSet)

urlpatterns = [
    path('api/', include(router.urls)),
    path('api/oracle/', OracleView.as_view(), name='oracle'),
]
