"""Graph layer zoo and model assembly."""
from .layers import (cheby_layer, gat_head, gat_layer, gcn_layer, graph_unet, linear,
                     topk_indices, topk_pool, transformer_layer, unpool)
from .model import KINDS, TASKS, Model, ModelSpec, assemble
from .structure import GraphStructure, estimate_lambda_max

__all__ = [
    "GraphStructure", "KINDS", "Model", "ModelSpec", "TASKS", "assemble", "cheby_layer",
    "estimate_lambda_max", "gat_head", "gat_layer", "gcn_layer", "graph_unet", "linear",
    "topk_indices", "topk_pool", "transformer_layer", "unpool",
]
