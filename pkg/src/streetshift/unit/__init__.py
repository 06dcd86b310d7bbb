from .checkpoint import CheckpointCorrupt, CheckpointError, CheckpointVersionError, load_checkpoint, save_checkpoint
from .inference import compute_loss, cycle, decode, encode, from_unit, reconstruct, to_unit, translate
from .model import DEFAULT_LAMBDAS, LossBreakdown, UnitConfig, UnitModel, build_model
from .training import NonFiniteLossError, train
