"""Deep neural inspection: affinity between hidden-unit behaviors and hypothesis functions."""

from .core import (AffinityResult, BehaviorBlock, SymbolDataset, UnitGroup, block_iterator,
                   load_dataset, read_behavior_file, write_behavior_file)
from .engine import EngineConfig, InspectionPlan, RunOutcome, bench, plan, run
from .extract import Extractor, ModelSpec, build_extractor
from .grammar import Grammar, ParseFailure, ParseTree, parse, parse_grammar_file, sample
from .hypothesis import (BehaviorCache, Fsm, HypothesisEvaluator, HypothesisSpec, evaluate_hypotheses,
                         fsm_hypothesis, keyword_hypothesis, tree_hypothesis)
from .inspectql import Catalog, execute, parse_query, run_query
from .measures import MeasureSpec, make_measure
from .verify import VerificationReport, gen_perturbations, silhouette

__version__ = "0.1.0"
