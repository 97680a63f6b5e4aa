from importlib.metadata import PackageNotFoundError, version


def _read_version() -> str:
    try:
        return version("fnbo")
    except PackageNotFoundError:
        return "0.1.0"


__version__ = _read_version()
