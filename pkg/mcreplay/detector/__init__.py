from .audio import AudioClip, FrameBatch, ManifestRecord, load_manifest, load_wav, write_wav
from .backbone import Architecture, ModelConfig, ModelParams, architecture_hash, init_params, score
from .checkpoint import load_params, save_params
from .errors import DetectorError
from .evaluation import ExperimentReport, ScoreSet, eer, evaluate
from .frontend import FilterBank, forward_frame, init_bank
from .synth import ArrayGeometry, SceneSpec, generate_corpus, preset
from .tensor import Graph, Tensor, grad_check
from .trainer import TrainConfig, multi_seed, train

__all__ = (
    "AudioClip",
    "FrameBatch",
    "ManifestRecord",
    "load_manifest",
    "load_wav",
    "write_wav",
    "Architecture",
    "ModelConfig",
    "ModelParams",
    "architecture_hash",
    "init_params",
    "score",
    "load_params",
    "save_params",
    "DetectorError",
    "ExperimentReport",
    "ScoreSet",
    "eer",
    "evaluate",
    "FilterBank",
    "forward_frame",
    "init_bank",
    "ArrayGeometry",
    "SceneSpec",
    "generate_corpus",
    "preset",
    "Graph",
    "Tensor",
    "grad_check",
    "TrainConfig",
    "multi_seed",
    "train",
)
