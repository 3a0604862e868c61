from django.apps import AppConfig


class MsmpAppConfig(AppConfig):
    name = 'msmp_app'
    verbose_name = "MSMP graph neural network compiler"
