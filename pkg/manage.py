#!/usr/bin/env python
"""Project entry point.

    python manage.py minres case --case case2 --N 4 --M 8
    python manage.py minres study --case case3 --N-list 1,2,4,8
    python manage.py test uzawa_fem
"""
import os
import sys


def main():
    os.environ.setdefault("DJANGO_SETTINGS_MODULE", "minres_project.settings")
    try:
        from django.core.management import execute_from_command_line
    except ImportError as exc:
        raise ImportError(
            "Couldn't import Django. Install the packages in requirements.txt "
            "to run the minres command and the test suite."
        ) from exc
    execute_from_command_line(sys.argv)


if __name__ == "__main__":
    main()
