"""Interaction-aware graph refinement of hand and object meshes."""
from .graph import (TypedEdgeSet, attention_edges, attention_matrix, build_final_graphs,
                    common_edges_inter, init_nodes, merge_edge_sets, scene_descriptor)
from .losses import (LossBreakdown, chamfer, edge_regularizer, joint_l2, laplacian_loss, refine_loss,
                     vertex_l2)
from .mesh import Mesh, load_mesh, save_mesh, signed_distance, vertex_adjacency
from .metrics import MetricsReport, evaluate, intersection_volume, max_penetration
from .model import ModelConfig, aggregate, gc_block, init_params, refine
from .synth import GraspScene, NoiseParams, make_hand, make_object, make_scene, perturb
from .train import AdamState, TrainConfig, adam_step, gradcheck

__version__ = "0.1.0"
