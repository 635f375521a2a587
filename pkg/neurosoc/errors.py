from __future__ import annotations


class NeurosocError(Exception):
    """Base error. `code` matches the JSON error model used by the HTTP layer."""

    code = "neurosoc_error"
    exit_code = 2

    def __init__(self, message: str, **details):
        super().__init__(message)
        self.message = message
        self.details = details

    def to_dict(self) -> dict:
        err = {"code": self.code, "message": self.message}
        if self.details:
            err["details"] = self.details
        return {"error": err}


class ContractViolation(NeurosocError):
    code = "contract_violation"
    exit_code = 1


class ConfigError(NeurosocError):
    code = "invalid_config"
    exit_code = 1


class ParityError(NeurosocError):
    code = "parity_error"

    def __init__(self, word: int):
        super().__init__(f"parity mismatch in flit 0x{word:08x}", word=word)
        self.word = word


class DatasetError(NeurosocError):
    code = "dataset_error"


class DivergenceError(NeurosocError):
    code = "diverged"


class ConversionError(NeurosocError):
    code = "conversion_error"


class SilentNetworkError(NeurosocError):
    code = "silent_network"


class SimulationError(NeurosocError):
    code = "simulation_error"
