"""Frequency-dynamics-aware economic dispatch toolkit.

Pipeline: generate labeled post-contingency frequency data with a
reduced-order multi-machine simulator, train a small ReLU network on it,
embed the network into DC optimal power flow as linear constraints, and
validate the resulting dispatches back in the simulator.
"""

from importlib import resources

__version__ = "0.1.0"

BUNDLED_CASES = ("wscc9_modified", "ieee39_modified")


def bundled_case_path(name: str):
    """Filesystem path of a bundled case JSON ('wscc9_modified' etc.)."""
    if name not in BUNDLED_CASES:
        raise KeyError(f"unknown bundled case {name!r}; have {BUNDLED_CASES}")
    return resources.files(__name__).joinpath("cases", f"{name}.json")
