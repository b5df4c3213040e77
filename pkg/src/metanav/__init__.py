"""Meta-planner training for a DWA local planner with behaviour-guided up-sampling."""
from metanav.angles import wrap_to_pi

__all__ = ["wrap_to_pi"]
__version__ = "0.1.0"
