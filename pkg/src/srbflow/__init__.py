"""srbflow: SRB measures, linear response and the entropy gradient flow for expanding torus maps."""

from .config import RunConfig, load_config, parse_config
from .entropy_gradient import (SobolevMetric, entropy, entropy_gateaux, gateaux_fd_check,
                               gradient_vector, sobolev_inner, sobolev_norm)
from .errors import SrbFlowError
from .flow import FlowConfig, FlowTrace, backward_probe, flow_step, run_flow
from .linear_response import (lipschitz_probe, response_density, response_fd_check,
                              second_order_probe)
from .map_model import ExpandingMap, VecField
from .transfer_op import GridField, TransferContext, duality_residual, gap_estimate, srb_density

__version__ = "0.1.0"

__all__ = [
    "ExpandingMap", "VecField", "GridField", "TransferContext",
    "srb_density", "gap_estimate", "duality_residual",
    "response_density", "response_fd_check", "second_order_probe", "lipschitz_probe",
    "SobolevMetric", "sobolev_inner", "sobolev_norm", "entropy", "entropy_gateaux",
    "gateaux_fd_check", "gradient_vector",
    "FlowConfig", "FlowTrace", "flow_step", "run_flow", "backward_probe",
    "RunConfig", "parse_config", "load_config", "SrbFlowError",
]
