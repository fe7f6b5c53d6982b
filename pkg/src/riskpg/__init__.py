"""Risk-aware policy gradients for expectile, UBSR and OCE objectives."""

from .errors import RiskPGError
from .losses import make_loss
from .mdp import MdpSpec, load_mdp, save_mdp
from .policy import PolicySpec
from .rapg import RapgConfig, RunRecord, run_rapg
from .risk import DiscreteDist, RiskSpec

__version__ = "0.1.0"

__all__ = [
    "DiscreteDist", "MdpSpec", "PolicySpec", "RapgConfig", "RiskPGError", "RiskSpec",
    "RunRecord", "load_mdp", "make_loss", "run_rapg", "save_mdp",
]
