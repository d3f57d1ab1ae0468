"""Phoneme-scale, gender-aware evaluation of multichannel speech enhancement."""

__version__ = "0.1.0"

from .alignment import AlignmentTrack, CategoryMap, PhonemeInterval, categorize, default_category_map, load_category_map, parse_textgrid, to_sample_ranges
from .audio import Spectrum, Waveform, convolve, energy, irfft, read_wav, resample, rfft, write_wav
from .metrics import SegmentDecomposition, SegmentMetrics, evaluate_utterance, sar_out, si_decompose, sir_in, sir_out
from .scenario import MixtureBundle, RIRSet, generate_ssn, make_mixture, scale_to_snr, spatialize
from .stats import StatTestResult, compare_groups, mann_whitney_u
from .stoi import StoiConfig, delta_stoi, stoi
