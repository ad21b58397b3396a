"""Exception types raised across the package."""


class MeshSmileError(Exception):
    """Base class; the CLI maps these to exit status 2."""


class ShapeMismatch(MeshSmileError, ValueError):
    pass


class IndivisibleHeads(MeshSmileError, ValueError):
    pass


class NonPositiveTemperature(MeshSmileError, ValueError):
    pass


class KOutOfRange(MeshSmileError, ValueError):
    pass


class COutOfRange(KOutOfRange):
    pass


class NoCurves(MeshSmileError, ValueError):
    pass


# landmark_io

class MalformedHeader(MeshSmileError, ValueError):
    pass


class TruncatedPayload(MeshSmileError, ValueError):
    pass


class NonFiniteValue(MeshSmileError, ValueError):
    pass


class InvalidSequence(MeshSmileError, ValueError):
    """A landmark sequence violates its invariants (empty, ragged, bad fps)."""


class UpsampleRequested(MeshSmileError, ValueError):
    pass


class DegenerateFrame(MeshSmileError, ValueError):
    pass


class TooFewSubjects(MeshSmileError, ValueError):
    pass


class CsvFormatError(MeshSmileError, ValueError):
    pass


# training / stats

class EmptyTrainSet(MeshSmileError, ValueError):
    pass


class EmptyTestSet(MeshSmileError, ValueError):
    pass


class DegenerateVariance(MeshSmileError, ValueError):
    pass


class ConfigInvalid(MeshSmileError, ValueError):
    pass


class CheckpointError(MeshSmileError, ValueError):
    pass
