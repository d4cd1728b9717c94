"""Joint class/attribute factorization models on a numpy autodiff core, with attribute-based rejection."""
from .data import AttributeSchema, DatasetConfig, DatasetSplit, build_dataset, default_classes, default_schema
from .graph import MODEL_TAGS, FactorizationPlan, plan_for
from .network import ArchitectureConfig, EddNetwork, build_network, predict, train
from .verify import Belnap, ConditionKB, candidate_classes, decide, default_kb, verify
from .harness import ExperimentConfig, MetricsReport, evaluate, run_experiment

__version__ = "0.1.0"
