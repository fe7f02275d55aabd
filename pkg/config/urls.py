"""
URL configuration for config project.

The grounder is operated entirely through management commands, so no routes
are exposed.
"""

urlpatterns = []
