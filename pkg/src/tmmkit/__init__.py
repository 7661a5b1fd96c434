"""tmmkit: tractable generative classifiers over tensor-factorized mixtures.

A mixture whose component-assignment prior is an N-order tensor in CP or
hierarchical form is evaluated exactly by a log-space circuit of weighted
sums and products. That buys, in one forward pass each: class-conditional
likelihoods, exact marginalization over arbitrary missing coordinates, and
ancestral sampling — with brute-force oracles verifying all of it on small
instances.
"""

from .components import (
    CATEGORICAL,
    GAUSSIAN,
    ComponentFamily,
    categorical_family,
    gaussian_family,
    log_density,
    sample_component,
)
from .factorization import (
    CPParams,
    HTParams,
    cp_to_ht,
    expand_cp,
    expand_ht,
    gmm_sparse_cp,
    gmm_sparse_prior,
    normalize_to_simplex,
    random_cp,
    random_ht,
)
from .instances import MaskedInstance, all_missing, complete
from .network import Network, forward, forward_batch, representation
from .tensor import DenseTensor, matricize, numeric_rank, tensor_product

__version__ = "0.1.0"
