"""Confidence-guided adaptation of disparity networks, in numpy.

Submodules: ``formats`` (image and map I/O), ``stereo`` (census/AD costs,
SGM, WTA, left-right check), ``confidence`` (LRC and ConfNet), ``autodiff``
(reverse-mode engine, Adam, gradient checks), ``losses``, ``model``
(TinyDispNet), ``adapt`` (labels and fine-tuning), ``metrics`` and ``synth``
(procedural stereo scenes).
"""
from . import adapt, autodiff, confidence, formats, losses, metrics, model, stereo, synth
from .adapt import AdaptConfig, AdaptationSample, adapt_model, fuse_labels, generate_sample, pretrain
from .confidence import ConfNet, LRCConfidence, confnet_train, lrc_confidence, outlier_auc
from .formats import INVALID
from .losses import LossConfig, TauNet
from .metrics import mono_metrics, stereo_metrics
from .model import TinyDispNet
from .stereo import SgmParams, match_stereo
from .synth import SceneSpec, generate

__version__ = "0.1.0"
