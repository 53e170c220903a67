"""
WSGI config for goal_lab_application project.

Exposes ``application`` for gunicorn:
    gunicorn goal_lab_application.wsgi
"""

import os

from django.core.wsgi import get_wsgi_application

os.environ.setdefault("DJANGO_SETTINGS_MODULE", "goal_lab_application.settings")

application = get_wsgi_application()
