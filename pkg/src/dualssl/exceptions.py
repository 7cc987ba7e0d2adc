"""Exception types shared across the package."""


class DualSSLError(Exception):
    """Base class for all package errors."""


class ConfigurationError(DualSSLError):
    """Invalid configuration: unknown dataset, bad fusion geometry,
    variant/model mismatch, malformed config file."""


class SplitError(DualSSLError):
    """A labeled/unlabeled partition could not be constructed."""


class ContractError(DualSSLError):
    """A caller violated a documented precondition (bad shapes,
    non-normalized probabilities, empty batch)."""


class NumericalError(DualSSLError):
    """Non-finite values appeared during a forward pass.

    ``layer_id`` names the first module whose output was non-finite.
    """

    def __init__(self, layer_id: str, message: str = ""):
        self.layer_id = layer_id
        super().__init__(message or f"non-finite activations in layer '{layer_id}'")


class TrainingAborted(DualSSLError):
    """Training stopped on a non-finite loss.

    Carries a diagnostic record (step, component losses, learning rate)
    that the trainer also persists to the run directory.
    """

    def __init__(self, diagnostic: dict):
        self.diagnostic = diagnostic
        super().__init__(f"training aborted at step {diagnostic.get('step')}: non-finite loss")
