"""Zero-intelligence limit order book with granularity-conditioned price impact."""

__version__ = "0.1.0"

from .book import Book, BookSnapshot, ExecutionReport, Order, PlacementOutcome, Side, UndefinedPrice
from .deposition import Case, ConfigError, EventKind, EventSpec, MechanismConfig, RandomStream
from .engine import Engine, RunSummary, StepRecord, initialize, returns, run

__all__ = [
    "Book", "BookSnapshot", "Case", "ConfigError", "Engine", "EventKind", "EventSpec",
    "ExecutionReport", "MechanismConfig", "Order", "PlacementOutcome", "RandomStream",
    "RunSummary", "Side", "StepRecord", "UndefinedPrice", "initialize", "returns", "run",
]
