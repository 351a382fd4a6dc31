"""DeepONet error analysis at desk scale.

Measures on periodic function spaces, encoders and decoders, affine trunk
reconstructions, ground-truth operators, ReLU networks with explicit
constructions, and a DeepONet estimator with Monte-Carlo error estimators.
"""

__version__ = "0.1.0"

from .measures import MeasureSpec, PeriodicGrid, FieldSample, empirical_spectrum, sample, sample_batch
from .encdec import SensorSet, encode_pointwise, encode_cell_average, decode_dft, make_pseudoinverse_decoder
from .reconstruction import TrunkBasis, dual_basis, project, reconstruct, pca_reconstruction, analytic_trunk
from .oracles import OperatorSpec
from .neuralnet import Mlp
from .deeponet import DeepONet

__all__ = [
    "MeasureSpec",
    "PeriodicGrid",
    "FieldSample",
    "empirical_spectrum",
    "sample",
    "sample_batch",
    "SensorSet",
    "encode_pointwise",
    "encode_cell_average",
    "decode_dft",
    "make_pseudoinverse_decoder",
    "TrunkBasis",
    "dual_basis",
    "project",
    "reconstruct",
    "pca_reconstruction",
    "analytic_trunk",
    "OperatorSpec",
    "Mlp",
    "DeepONet",
]
