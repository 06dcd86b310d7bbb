"""Outcome-defined streetscape domains, unpaired translation between them, and
metrics describing what the translation changed."""
from . import analysis, dataset, geo, report
from .estimator import DomainSelector, UnitTranslator
from .unit import build_model, load_checkpoint, save_checkpoint, train, translate, UnitConfig

__version__ = "0.1.0"
