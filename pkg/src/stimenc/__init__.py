"""Training-free stimulus encoding for simulated retinal implants."""

from .baselines import ResampleSpec, downsample, pseudo_inverse_encode, rescale_to_target
from .metrics import MetricReport, mae, psnr, ssim
from .perception import (IMPLANT_15, IMPLANT_28, IMPLANT_100, STANDARD_PATIENTS, AxonMapModel,
                         ImplantGrid, PatientParams, PerceptGrid,
                         build_perception_matrix, forward_linear, forward_nonlinear)
from .solver import EncodeResult, SolverOptions, encode, encode_batch, encode_sequence
from .sparse import CsrMatrix, build_from_triplets, spmv, spmv_transpose, truncate

__version__ = "0.1.0"
