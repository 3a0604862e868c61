"""
Console entry point: `msmpc <subcommand> ...` without going through manage.py.
"""
import os
import sys


def main(argv: list[str] | None = None) -> int:
    os.environ.setdefault("DJANGO_SETTINGS_MODULE", "Msmpc.settings")
    import django
    from django.apps import apps

    if not apps.ready:
        django.setup()
    from .management.commands.msmpc import Command

    args = sys.argv[1:] if argv is None else list(argv)
    try:
        Command().run_from_argv(["msmpc", "msmpc", *args])
    except SystemExit as exc:
        code = exc.code
        return code if isinstance(code, int) else (0 if code is None else 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
