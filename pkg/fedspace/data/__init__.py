"""Datasets and federated split generation."""

from fedspace.data.datasets import LabeledDataset, load_cifar100, load_dataset, make_gaussian_blobs
from fedspace.data.splitgen import (
    ClientSplit,
    FederatedSplit,
    TaskStream,
    active_task,
    generate_split,
    load_split,
    save_split,
    validate_split,
)

__all__ = [
    "LabeledDataset",
    "make_gaussian_blobs",
    "load_cifar100",
    "load_dataset",
    "TaskStream",
    "ClientSplit",
    "FederatedSplit",
    "active_task",
    "generate_split",
    "save_split",
    "load_split",
    "validate_split",
]
