"""
URL configuration for stockauction project.

Only the Django admin is served; it lists recorded training runs, experiment
rows and audit runs.
"""

from django.contrib import admin
from django.urls import path

urlpatterns = [
    path("admin/", admin.site.urls),
]
