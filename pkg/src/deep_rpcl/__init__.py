"""Rival penalized competitive learning for clustering and embedding training."""

from .datagen import LabeledSet, generate_clusters
from .embed_net import TrainConfig, init_model, train_embedding
from .evalkit import angle_statistics, cmc_curve, fisher_criterion, roc_curve, verification_accuracy
from .margin_losses import CenterLossState, ClassifierHead, MarginConfig, loss_and_grads
from .numeric_core import Rng
from .rpcl_cluster import CenterSet, RpclParams, fit_rpcl

__all__ = [
    "CenterLossState", "CenterSet", "ClassifierHead", "LabeledSet", "MarginConfig", "Rng", "RpclParams",
    "TrainConfig", "angle_statistics", "cmc_curve", "fisher_criterion", "fit_rpcl", "generate_clusters",
    "init_model", "loss_and_grads", "roc_curve", "train_embedding", "verification_accuracy",
]
