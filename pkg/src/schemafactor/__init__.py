from .envs import BimanualEnv, EpisodeTrace, Observation, WorldState
from .pamdp import JointAction, JointSkill, TaskSpec, build_task_spec
from .policy import BaselinePolicy, OraclePolicy, SchemaPolicy, build_policy
from .schema import SchemaLogits, export_schema, import_schema, update_logits
from .trainer import TrainerConfig, TrainingResult, train

__version__ = "0.1.0"

__all__ = [
    "BaselinePolicy",
    "BimanualEnv",
    "EpisodeTrace",
    "JointAction",
    "JointSkill",
    "Observation",
    "OraclePolicy",
    "SchemaLogits",
    "SchemaPolicy",
    "TaskSpec",
    "TrainerConfig",
    "TrainingResult",
    "WorldState",
    "__version__",
    "build_policy",
    "build_task_spec",
    "export_schema",
    "import_schema",
    "train",
    "update_logits",
]
