"""Exception types shared across the package."""


class CapacityError(RuntimeError):
    """Raised when a request exceeds a simulator resource cap (qubits,
    enumeration budget, dense-block size)."""


class ContractError(RuntimeError):
    """Raised when a declared input contract (norm certificate, sup-norm
    range) is found to be violated during a checking sweep."""
