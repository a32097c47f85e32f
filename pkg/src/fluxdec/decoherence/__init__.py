"""Local system-environment couplings, exact and Markovian decoherence, rate bounds."""
from .dynamics import (
    DecoherenceTrace,
    embed_truncated,
    joint_hamiltonian,
    leaky_box,
    lindblad_evolve,
    lindblad_surrogate,
    markov_jumps,
    simulate_joint,
)
from .environment import (
    EnvironmentCorrelation,
    EnvironmentModel,
    EnvironmentSpec,
    InteractionChannel,
    build_environment,
    build_interaction,
    env_correlation,
    pair_correlation_integrals,
)
from .rates import (
    ChannelSweep,
    RateFit,
    RateReport,
    TranslationCheck,
    channel_fluctuation,
    channel_sweep,
    check_translation_invariance,
    extract_rate,
    gamma_bound,
    verify_rate_bound,
)

__all__ = [
    "ChannelSweep", "DecoherenceTrace", "EnvironmentCorrelation", "EnvironmentModel",
    "EnvironmentSpec", "InteractionChannel", "RateFit", "RateReport", "TranslationCheck",
    "build_environment", "build_interaction", "channel_fluctuation", "channel_sweep",
    "check_translation_invariance", "embed_truncated", "env_correlation", "extract_rate",
    "gamma_bound", "joint_hamiltonian", "leaky_box", "lindblad_evolve", "lindblad_surrogate",
    "markov_jumps", "pair_correlation_integrals", "simulate_joint", "verify_rate_bound",
]
