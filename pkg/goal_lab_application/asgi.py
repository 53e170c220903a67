"""
ASGI config for goal_lab_application project.
"""

import os

from django.core.asgi import get_asgi_application

os.environ.setdefault("DJANGO_SETTINGS_MODULE", "goal_lab_application.settings")

application = get_asgi_application()
