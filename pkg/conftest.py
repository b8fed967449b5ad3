"""Configure Django for pytest the way manage.py does for `manage.py test`."""
import os

import django

os.environ.setdefault("DJANGO_SETTINGS_MODULE", "minres_project.settings")
django.setup()
