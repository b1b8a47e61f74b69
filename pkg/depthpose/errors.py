# Exit codes are a scripting contract: 0 ok, 2 input, 3 empty/degenerate, 4 pipeline.


class DepthPoseError(Exception):
    exit_code = 1


class InputError(DepthPoseError, ValueError):
    """Missing, corrupt or unparseable input (files, arguments, config)."""
    exit_code = 2


class ConfigError(InputError):
    pass


class EmptyDataError(DepthPoseError, ValueError):
    """Nothing to work on: empty cloud, empty mesh, nothing rendered."""
    exit_code = 3


class DegenerateFitError(EmptyDataError):
    """Correspondences do not determine a unique rotation."""


class PipelineError(DepthPoseError, RuntimeError):
    exit_code = 4


class ObjectNotFoundError(PipelineError):
    pass


class MissingVotesError(PipelineError):
    def __init__(self, missing: list[int]):
        self.missing = list(missing)
        super().__init__(f"no votes for keypoints {self.missing}")


class DomainError(InputError):
    """Argument outside the domain of a geometric function (e.g. z <= 0)."""
