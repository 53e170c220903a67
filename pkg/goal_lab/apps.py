from django.apps import AppConfig


class GoalLabConfig(AppConfig):
    default_auto_field = "django.db.models.BigAutoField"
    name = "goal_lab"
    verbose_name = "Goal-conditioned RL laboratory"
