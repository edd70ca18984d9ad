from .bench import throughput_bench
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, read_header, save_checkpoint
from .loop import TrainConfig, TrainResult, evaluate, evaluate_model, init_model, predict, train
from .optim import Adam, adam_step
from .verify import Ledger, check_names, model_grad_check, randomize, verify

__all__ = [
    "throughput_bench",
    "Checkpoint", "CheckpointError", "load_checkpoint", "read_header", "save_checkpoint",
    "TrainConfig", "TrainResult", "evaluate", "evaluate_model", "init_model", "predict", "train",
    "Adam", "adam_step",
    "Ledger", "check_names", "model_grad_check", "randomize", "verify",
]
