"""Emergency evacuation planning on time-dependent road networks."""

from importlib.resources import files

__version__ = "0.1.0"


def scenario_path(name: str):
    """Path of a bundled scenario (``household``, ``road`` or ``facility``)."""
    return files(__name__) / "scenarios" / f"{name}.json"


BUNDLED_SCENARIOS = ("household", "road", "facility")
