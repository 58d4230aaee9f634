"""Exception and warning types shared across the package."""

from __future__ import annotations


class NeuroclanError(Exception):
    """Base class for all package errors."""


# --- model definition problems -------------------------------------------

class DualityViolation(NeuroclanError):
    def __init__(self, i: int, j: int, k: int, direction: str = "post/pre"):
        self.i, self.j, self.k = i, j, k
        super().__init__(f"synaptic duality broken at ({i}, {j}, k={k}) [{direction}]")


class InertNeuron(NeuroclanError):
    def __init__(self, i: int):
        self.i = i
        super().__init__(f"neuron {i} has total rate 0 (inert)")


class NegativeRate(NeuroclanError):
    def __init__(self, i: int, k: int, value: float):
        self.i, self.k, self.value = i, k, value
        super().__init__(f"negative rate {value} at neuron {i}, threshold {k}")


class SelfSynapse(NeuroclanError):
    def __init__(self, i: int, k: int):
        self.i, self.k = i, k
        super().__init__(f"neuron {i} lists itself in its threshold-{k} synapse set")


class UnboundedNeighborhood(NeuroclanError):
    def __init__(self, i: int, k: int, limit: int):
        self.i, self.k, self.limit = i, k, limit
        super().__init__(
            f"pre/post set of neuron {i} at threshold {k} exceeds the "
            f"enumeration limit {limit}"
        )


class ConditionViolated(NeuroclanError):
    """A stationarity condition fails analytically (reported with both sides)."""


class AlphaNotContracting(NeuroclanError):
    def __init__(self, alpha: float):
        self.alpha = alpha
        super().__init__(
            f"contraction coefficient alpha = {alpha} >= 1; the coupling error "
            "bound delta/(1-alpha) is undefined"
        )


class ConditionWarning(UserWarning):
    """Non-fatal diagnostics: alpha at or above 1, degenerate bounds."""


# --- engine failures -------------------------------------------------------

class EmptyClan(NeuroclanError):
    def __init__(self) -> None:
        super().__init__("backward step requested on an empty ancestor set")


class BudgetExceeded(NeuroclanError):
    def __init__(self, max_steps: int, sample_index: int | None = None):
        self.max_steps = max_steps
        self.sample_index = sample_index
        where = "" if sample_index is None else f" (sample_index={sample_index})"
        super().__init__(
            f"ancestor set did not empty within {max_steps} steps{where}; "
            "the model may not be contracting (alpha close to or above 1)"
        )


class ContainmentViolation(NeuroclanError):
    """Internal invariant failure: restricted clan escaped the full clan."""

    def __init__(self, sample_index: int | None = None):
        self.sample_index = sample_index
        super().__init__("restricted ancestor set is not contained in the full one")


class ReplayInvariantViolation(NeuroclanError):
    """A replayed event touched a neuron outside its tracked window."""


# --- oracle / io -----------------------------------------------------------

class NeuronOutOfScope(NeuroclanError):
    def __init__(self, i: int):
        self.i = i
        super().__init__(f"neuron {i} is not part of the finite simulation scope")


class NotNormalized(NeuroclanError):
    def __init__(self, total: float):
        self.total = total
        super().__init__(f"histogram mass sums to {total}, expected 1")


class SchemaError(NeuroclanError):
    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")
