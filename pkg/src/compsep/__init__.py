"""Distributed composite optimisation with split communication.

The objective ``h = f + g`` is spread over two groups of nodes that share a
server; the methods here trade rounds over the expensive group ``M_f``
against rounds over ``M_g`` by exploiting Hessian similarity between the
server's local functions and the group averages.
"""

from .algorithms import (
    ALGORITHMS,
    Trace,
    TraceRecord,
    accvrcs_z_update,
    run_acc_vrcs,
    run_algorithm,
    run_c_aeg,
    run_sc_aeg,
    run_vrcs,
    run_vrcs_epoch,
    tune,
)
from .errors import (
    CompsepError,
    ConstructionError,
    DefinitenessError,
    InputError,
    ModeError,
    NumericalError,
    ParameterError,
    PartitionError,
    ProtocolError,
)
from .problems import (
    CompositeProblem,
    SimilarityProfile,
    make_logistic_split,
    make_profile,
    make_quadratic_family,
    make_two_gaussian_dataset,
    solve_reference,
)
from .randomness import RngStream
from .simnet import CommLedger, Group, Network

__version__ = "0.1.0"
