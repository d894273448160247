"""Popularity-driven microservice deployment and subtask offloading at the edge."""

from .errors import InfeasibleError, InstanceTooLargeError
from .catalog import (Microservice, Service, ServiceCatalog, NewServiceDistribution, hit_rate,
                      push_service, hit_rate_after_push, sample_new_service)
from .adgraph import (MecServer, AdGraph, KmstGraph, build_ad_graph, approx_storage,
                      to_kmst_instance, star_expand)
from .kmst import TreeSolution, kmst_exact, kmst_heuristic, verify_tree
from .deployment import DeploymentPlan, solve_deployment, deredundancy_degree
from .offload import (Subtask, Target, OffloadMatrix, build_offload_matrix, object_sequence,
                      redefined_sequence, integration_priority, design_queue, evaluate_schedule,
                      validate_schedule)
from .sim import SimConfig, SlotMetrics, run_slot, simulate, critical_ues, compute_eur, run_baseline

__version__ = "0.1.0"
