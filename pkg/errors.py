"""
Error taxonomy for the BayesNF toolkit.

Each category carries the process exit code the CLI reports for it:
- InputError: malformed files, invalid configuration or arguments (2)
- CompatibilityError: checkpoint/config/state mismatches (3)
- NumericalError: non-finite objectives, gradients or activations (4)
"""


class BayesNFError(Exception):
    """Base class for all toolkit errors."""
    exit_code = 1


class InputError(BayesNFError, ValueError):
    """Invalid user input: data files, configuration values, arguments."""
    exit_code = 2


class CompatibilityError(BayesNFError):
    """Checkpoint, configuration or layout do not belong together."""
    exit_code = 3


class NumericalError(BayesNFError, ArithmeticError):
    """A computation produced a non-finite value."""
    exit_code = 4
