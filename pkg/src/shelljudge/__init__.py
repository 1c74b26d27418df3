"""Desk-scale judge for timed shell-scripting contests."""

from .judge import EvaluationResult, TestResult, Verdict, compare_output, evaluate
from .pack import CaseSet, ComparisonMode, ContestPack, load_pack, validate_pack
from .sandbox import ExecutionOutcome, ExecutionSpec, backend_capabilities, execute
from .scoring import problem_stats, score
from .state import Contest, ManualClock, open_contest, replay

__version__ = "0.1.0"

__all__ = [
    "CaseSet", "ComparisonMode", "Contest", "ContestPack", "EvaluationResult",
    "ExecutionOutcome", "ExecutionSpec", "ManualClock", "TestResult", "Verdict",
    "backend_capabilities", "compare_output", "evaluate", "execute", "load_pack",
    "open_contest", "problem_stats", "replay", "score", "validate_pack",
]
