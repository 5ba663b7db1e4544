"""Exception hierarchy. Every error carries a machine-readable ``code``."""


class MfcertError(Exception):
    code = "E_GENERIC"
    #: gate failures map to CLI exit code 2 instead of 1
    gate = False


class AllNegInfinite(MfcertError):
    code = "E_ALL_NEG_INF"


class NonFiniteInput(MfcertError):
    code = "E_NONFINITE_INPUT"


class NonFiniteKernel(MfcertError):
    code = "E_NONFINITE_KERNEL"


class OutOfRange(MfcertError):
    code = "E_OUT_OF_RANGE"


class NonFinite(MfcertError):
    code = "E_NONFINITE"


class InvalidModel(MfcertError):
    code = "E_INVALID_MODEL"


class NotStronglyConcave(MfcertError):
    code = "E_NOT_STRONGLY_CONCAVE"


class GrowthGateFailed(MfcertError):
    code = "E_GROWTH_GATE"
    gate = True


class NoConvergence(MfcertError):
    code = "E_NO_CONVERGENCE"


class GridOverflow(MfcertError):
    code = "E_GRID_OVERFLOW"


class SymmetryGateFailed(MfcertError):
    code = "E_SYMMETRY_GATE"
    gate = True


class NotSPD(MfcertError):
    code = "E_NOT_SPD"


class DimensionTooLarge(MfcertError):
    code = "E_DIMENSION_TOO_LARGE"


class DivergentChain(MfcertError):
    code = "E_DIVERGENT_CHAIN"


class LengthMismatch(MfcertError):
    code = "E_LENGTH_MISMATCH"


class NotDoublyStochastic(MfcertError):
    code = "E_NOT_DOUBLY_STOCHASTIC"
    gate = True


class NotNonpositiveKernel(MfcertError):
    code = "E_KERNEL_NOT_NONPOSITIVE"
    gate = True


class TimeOutOfRange(MfcertError):
    code = "E_TIME_OUT_OF_RANGE"


class ClipBudgetExceeded(MfcertError):
    code = "E_CLIP_BUDGET"
