"""Channel-model and data-driven BCJR symbol detection for ISI channels with bursty impulsive noise."""

__version__ = "0.1.0"

from .channel import (ChannelConfig, Frame, IsiProfile, MarkovMiddletonParams, TrellisSpec,
                      build_isi_profile, build_joint_trellis, build_reduced_trellis,
                      middleton_levels, noise_transition_matrix, simulate_frame)
from .errors import (ContractViolationError, DegenerateLikelihoodError, DivergenceError,
                     InvalidInputError, InvalidParameterError)
from .fec import (ConvCodeSpec, Interleaver, conv_encode, deinterleave, free_distance,
                  interleave, soft_decode)
from .hmm import BaumWelchConfig, StateAlignment, align_states, baum_welch, hmm_detect
from .nn import (GmmMarginal, LabeledDataset, NnParams, fit_marginal, nn_detect, nn_likelihood,
                 train_classifier)
from .trellis import (PosteriorGrid, SoftSymbolOutput, forward_backward, map_detect,
                      stationary_distribution, symbol_posteriors)
