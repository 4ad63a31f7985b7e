class TsciError(Exception):
    """Base class for every error raised by the estimation pipeline."""

    exit_code = 1


class DataValidationError(TsciError):
    """Input data or run configuration violates a precondition."""

    exit_code = 2


class EstimationError(TsciError):
    """The numerics cannot produce an estimate (absorbed IV, empty leaves, ...)."""

    exit_code = 3


# --- Warning categories ---
class RankDeficiencyWarning(UserWarning):
    pass


class WeakInstrumentWarning(UserWarning):
    pass


class BootstrapWarning(UserWarning):
    pass


class SplitFailureWarning(UserWarning):
    pass
