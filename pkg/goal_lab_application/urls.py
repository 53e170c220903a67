"""
URL configuration for goal_lab_application project.

Only the admin is served: stored runs, metrics rows and stitching results,
with CSV export through django-import-export.
"""

from django.contrib import admin
from django.urls import path

urlpatterns = [
    path("admin/", admin.site.urls),
]
