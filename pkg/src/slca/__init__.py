"""Sparse recovery with spiking locally competitive networks.

Solvers for constrained/unconstrained LASSO, Elastic-Net, and a family of
non-convex penalties, implemented two ways: a generalized spiking network
engine over point-neuron models (PIF, LIF, GIF, Morris-Lecar, Wang-Buzsaki)
whose firing rates converge to the optimum, and classical proximal-gradient
baselines (ISTA/FISTA, analog LCA ODE) used as oracles.
"""

from .baselines import (
    LcaOdeConfig,
    ProxSolverConfig,
    fista,
    ista,
    lca_ode,
    lipschitz,
)
from .core import (
    GramCache,
    SensingProblem,
    SolveTrace,
    feasible,
    gram_cache,
    lambda_max,
    nmse,
    normalize_columns,
    objective,
    psnr,
    r2,
    snr,
)
from .engine import (
    EngineConfig,
    EngineDivergedError,
    estimate_rates,
    merge_split_solution,
    solve,
    solve_classic,
    split_problem,
)
from .gain import (
    GainSaturationError,
    GainTable,
    cached_gain,
    invert_gain,
    lif_gain,
    lif_gain_inverse,
    load_gain_csv,
    save_gain_csv,
    tabulate_gain,
)
from .generators import (
    GroundTruth,
    RegressionTestSet,
    cs_image_problem,
    cs_image_reconstruct,
    dwt2,
    gaussian_problem,
    idwt2,
    load_instance,
    phantom,
    ricker,
    ricker_dictionary,
    save_instance,
    sinusoid_regression,
)
from .neurons import Model, from_preset, simulate, step
from .penalties import (
    Penalty,
    RuleReport,
    arctangent,
    elastic_net,
    exponential,
    l1,
    log_barrier,
    logarithmic,
    penalty_grad,
    penalty_value,
    prox,
    threshold,
    validate_rules,
)

__version__ = "0.1.0"
