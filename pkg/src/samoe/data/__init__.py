"""CSI data model, synthetic domains, file format and replay buffer."""

from .csid import file_size, load_dataset, save_dataset
from .dataset import (
    N_CHANNELS,
    N_CLASSES,
    N_FRAMES,
    N_SUBCARRIERS,
    SAMPLE_SHAPE,
    CsiSample,
    DomainDataset,
    split,
)
from .replay import ReplayBuffer, buffer_update, router_training_set
from .synthetic import SyntheticDomainSpec, generate_domain, separation_stats

__all__ = [
    "N_CHANNELS",
    "N_CLASSES",
    "N_FRAMES",
    "N_SUBCARRIERS",
    "SAMPLE_SHAPE",
    "CsiSample",
    "DomainDataset",
    "ReplayBuffer",
    "SyntheticDomainSpec",
    "buffer_update",
    "file_size",
    "generate_domain",
    "load_dataset",
    "router_training_set",
    "save_dataset",
    "separation_stats",
    "split",
]
