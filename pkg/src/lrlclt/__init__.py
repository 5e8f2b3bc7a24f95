"""High-temperature cluster expansion and local CLT checks for long-range lattice spin systems."""

from lrlclt.errors import BudgetExceeded, DomainError

__version__ = "0.1.0"

__all__ = ["BudgetExceeded", "DomainError", "__version__"]
