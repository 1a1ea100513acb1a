"""Virtual-node injection attacks on message-passing graph networks."""

from .attack import (AttackConfig, Budget, VARIANTS, apply_variant,
                     attack_white_box_sgc, budget_graph_task, budget_node_task,
                     make_v, peanut_core, random_baseline, sign_align)
from .data_io import (DataFormatError, DatasetManifest, Split,
                      generate_regression_graphs, generate_sbm, load_checkpoint,
                      load_graph_json, make_folds, make_split, save_checkpoint,
                      save_graph_json)
from .evaluation import (AttackReport, accuracy, attack_efficacy, macro_f1,
                         mae, rmse, run_graph_attack, run_node_attack)
from .graph import (Graph, Perturbation, PerturbedGraph,
                    build_perturbed_adjacency, normalized_adjacency,
                    real_node_rows, symmetric_normalize)
from .linalg import (DegenerateEmbeddingError, EigenResult,
                     dominant_eigenvector_gram, dominant_eigenvector_symmetric,
                     frobenius_norm)
from .models import (ModelCheckpoint, embed, gcn_forward, gin_forward,
                     graph_head, init_checkpoint, operator_for,
                     pool_and_readout, sage_forward, sgc_forward)
from .training import (GraphTaskData, NodeTaskData, TrainConfig, TrainResult,
                       TrainingDivergedError, train)

__version__ = "0.1.0"
