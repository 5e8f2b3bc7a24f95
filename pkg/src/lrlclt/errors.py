class DomainError(ValueError):
    """An argument lies outside the domain of the operation."""


class BudgetExceeded(RuntimeError):
    """An enumeration would exceed its configured budget."""

    def __init__(self, what: str, needed: int, budget: int):
        self.what = what
        self.needed = needed
        self.budget = budget
        super().__init__(f"{what}: {needed} exceeds enumeration budget {budget}")
