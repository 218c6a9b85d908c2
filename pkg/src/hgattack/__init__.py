"""Structure attacks on hypergraph neural networks."""

from .attack import STRATEGIES, AttackConfig, AttackOutcome, Flip, run_attack, run_hyperattack
from .construction import Hypergraph, build
from .dataset import Dataset, gen_synthetic, load_content_file, make_split
from .hgnn import TrainConfig, forward, predict, train

__version__ = "0.1.0"

__all__ = [
    "STRATEGIES", "AttackConfig", "AttackOutcome", "Flip", "run_attack", "run_hyperattack",
    "Hypergraph", "build", "Dataset", "gen_synthetic", "load_content_file", "make_split",
    "TrainConfig", "forward", "predict", "train",
]
