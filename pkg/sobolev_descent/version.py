# -*- coding: utf-8 -*-

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("sobolev_descent")
except PackageNotFoundError:
    __version__ = "0+unknown"


def get_git_version():
    """
    Get the full version name with git hash, e.g. "0.1.0-12-g958b7254-dirty"
    Falls back to the installed version outside of a git repository.
    :return: the version name
    """
    from subprocess import PIPE, Popen
    try:
        p = Popen(['git', 'describe', '--tags', '--dirty', '--always'],
                  stdout=PIPE, stderr=PIPE,
                  cwd=__file__.rsplit("/", 2)[0] or ".")
        return p.stdout.readlines()[0].strip().decode("UTF-8")
    except (OSError, IndexError):
        return __version__
