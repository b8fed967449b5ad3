from django.apps import AppConfig


class UzawaFemConfig(AppConfig):
    default_auto_field = "django.db.models.BigAutoField"
    name = "uzawa_fem"
    verbose_name = "Minimal-residual FEM with deep residual Uzawa"
