"""Beam alignment simulator for multi-panel millimetre-wave devices."""

from .antenna import Codebook, ElementPattern, dft_codebook, ut_codebook
from .channel import Scene, assemble_channel, measure_rss, trace_rays
from .dataset import Dataset, generate, load_dataset, save_dataset, split
from .geometry import DeviceDesign, PanelLayout, Pose, edge_design, edge_face_design, get_design
from .mlp import MlpModel, build_net1, build_net2, build_sn, train

__all__ = [
    "Codebook",
    "ElementPattern",
    "dft_codebook",
    "ut_codebook",
    "Scene",
    "assemble_channel",
    "measure_rss",
    "trace_rays",
    "Dataset",
    "generate",
    "load_dataset",
    "save_dataset",
    "split",
    "DeviceDesign",
    "PanelLayout",
    "Pose",
    "edge_design",
    "edge_face_design",
    "get_design",
    "MlpModel",
    "build_net1",
    "build_net2",
    "build_sn",
    "train",
]

__version__ = "0.1.0"
