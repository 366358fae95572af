"""smclab: sequential Monte Carlo algorithms with exact reference engines.

State-space models, bootstrap and auxiliary particle filters, the stochastic
ensemble Kalman filter, backward particle smoothing, particle marginal
Metropolis-Hastings, tempered SMC samplers and rare-event importance
splitting -- plus exact Kalman and forward-backward recursions to test all
of it against.
"""

__version__ = "0.1.0"

from .enkf import EnkfConfig, EnkfEnsemble, EnkfTrace, enkf_step, run_enkf
from .errors import (
    CapabilityError,
    ConfigError,
    DegenerateModelError,
    DegenerateWeightsError,
    NumericalError,
)
from .exact import (
    DiscreteBelief,
    GaussianBelief,
    KalmanResult,
    hmm_backward_smooth,
    hmm_forward,
    kalman_predict,
    kalman_smoother,
    kalman_update,
    run_kalman_filter,
)
from .filtering import (
    AuxiliarySpec,
    FilterConfig,
    FilterTrace,
    ParticleEnsemble,
    apf_step,
    run_filter,
    sample_path,
    sir_step,
)
from .models import (
    FiniteHMM,
    LinearGaussianSSM,
    ParametricSSM,
    StateSpaceModel,
    StochasticGrowthSSM,
    simulate,
)
from .pmmh import PmmhChain, PmmhConfig, PmmhState, ProposalKernel, pmmh_step, run_pmmh
from .resampling import (
    ResampleCounts,
    ResamplingConfig,
    WeightVector,
    counts_to_indices,
    ess,
    multinomial_resample,
    should_resample,
    systematic_resample,
)
from .smc_sampler import (
    AnnealedSequence,
    RandomWalkMetropolis,
    SmcResult,
    SmcSamplerConfig,
    TemperedSequence,
    move,
    run_smc_sampler,
    temper_reweight,
)
from .smoothing import SmoothingWeights, backward_smooth, smoothed_means, smoothed_quantiles
from .splitting import (
    LevelProcess,
    SplittingEstimate,
    SplittingSummary,
    random_walk_process,
    splitting_replicated,
    splitting_run,
)
from .util import substream
