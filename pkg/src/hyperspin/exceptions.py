"""Exception hierarchy shared by the hyperspin modules."""


class HyperspinError(Exception):
    """Base class for all library errors."""


class ModelEvaluationFailed(HyperspinError):
    """A Hamiltonian could not be evaluated or its levels could not be labelled."""


class DegeneracyAmbiguous(ModelEvaluationFailed):
    """Doublet pairing is unreliable: Zeeman splittings approach the quadrupole gaps."""


class IllConditioned(HyperspinError):
    """A fitted quadratic form has near-degenerate axes, so its orientation is unidentifiable."""


class InsufficientCoincidences(HyperspinError):
    """Fewer than two subsite coincidence directions were found in a scan."""


class SingularNormalMatrix(HyperspinError):
    """The Gauss-Newton normal matrix is rank deficient.

    Attributes
    ----------
    null_direction : numpy.ndarray
        Unit vector in parameter space along the unidentifiable combination.
    names : tuple of str
        Parameter names matching the entries of ``null_direction``.
    """

    def __init__(self, message, null_direction=None, names=()):
        super().__init__(message)
        self.null_direction = null_direction
        self.names = tuple(names)


class NyquistViolation(HyperspinError):
    """Sampling rate too low for the heterodyne band being recorded."""


class FitStageError(HyperspinError):
    """A stage of the bootstrap fit pipeline failed.

    The failing stage name is stored in ``stage``; the original exception is
    chained as ``__cause__``.
    """

    def __init__(self, stage, message):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
