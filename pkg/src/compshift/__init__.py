"""Regression under source component shift.

Offline EM decomposition of a drifting stream into fixed components, a
held-out-likelihood rule for the component count, and online adaptation of
the mixing weight with an optimistic two-layer learner.
"""
from .adapt import AdaptConfig, AdaptState, adapt_step, ensemble_gradient, run_adaptation
from .baselines import BaselineConfig, offline_run, ogd_run
from .data import Dataset, SynthSpec, default_synth_spec, holdout_split, load_csv, shift_split, synth_generate
from .decompose import EmConfig, e_step, init_h, init_v, m_step_loss, run_em
from .mixture import MixtureModel, gating, predict, sample_log_likelihood
from .select_k import compute_xi, interleaved_split, select_k

__version__ = "0.1.0"
