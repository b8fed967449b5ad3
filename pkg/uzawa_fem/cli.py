"""`main(argv)` entry point: the `minres` management command as a function.

Exit codes: 0 on success, 2 for usage errors (unknown flags or config keys),
1 for solver failures.
"""
import os
import sys

from django.core.management import ManagementUtility


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'minres_project.settings')
    try:
        ManagementUtility(['manage.py', 'minres', *argv]).execute()
    except SystemExit as e:
        if e.code is None:
            return 0
        return e.code if isinstance(e.code, int) else 1
    return 0


if __name__ == '__main__':
    sys.exit(main())
