from django.apps import AppConfig


class BeamformingConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'beamforming'
    verbose_name = 'Predictive beamforming and tracking'
