from .checkpoint import (
    CheckpointError,
    ModelCheckpoint,
    ModelConfig,
    checkpoint_from_bytes,
    checkpoint_to_bytes,
    load_checkpoint,
    save_checkpoint,
)
from .estimator import QualityTimeline, TrainingDivergedError, VCMRegressor, forward_timeline, train
from .lstm import LSTMWeights, forward, init_weights, loss_and_gradients, pad_batch, predict_sequences
