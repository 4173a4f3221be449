class ZeroProbabilityError(ValueError):
    """A sentence has probability zero, so posteriors are undefined."""


class BudgetExceededError(RuntimeError):
    """An exhaustive enumeration would exceed its configured budget."""


class TrainingDivergedError(FloatingPointError):
    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"training diverged at step {step}: loss is not finite")
