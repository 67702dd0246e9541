"""Exception hierarchy shared across the workbench modules."""


class DemobenchError(Exception):
    """Base class for all workbench errors."""


# --- robot model / URDF parsing ---

class MalformedXml(DemobenchError):
    """The URDF document is not well-formed XML or lacks required elements."""


class DanglingReference(DemobenchError):
    """A joint references a link name that does not exist."""


class NotATree(DemobenchError):
    """The link/joint graph is not a single-rooted tree."""


class MissingAxis(DemobenchError):
    """A non-fixed joint has no usable axis element."""


# --- kinematics ---

class DimensionMismatch(DemobenchError):
    """A configuration or vector has the wrong length for the model."""


class NonFiniteTarget(DemobenchError):
    """An IK target contains NaN or infinity."""


# --- scene ---

class NoObstacles(DemobenchError):
    """Point-cloud sampling was requested but no obstacle is flagged."""


# --- capture ---

class DuplicateSession(DemobenchError):
    """A recorder session with the same id is already active."""


class InvalidInterval(DemobenchError):
    """Recorder sample interval must be positive."""


class TooFewSamples(DemobenchError):
    """A demonstration needs at least two recorded samples."""


class SchemaViolation(DemobenchError):
    """A persisted file or wire payload does not match its schema."""


class IoError(DemobenchError):
    """Reading or writing a file failed."""


# --- learning ---

class EmptyTraces(DemobenchError):
    """Feature training requires at least one trace."""


class InconsistentDimensions(DemobenchError):
    """Traces or encodings disagree on dimensionality."""


class MissingTorques(DemobenchError):
    """Confidence estimation needs per-waypoint torques."""


class NoDemos(DemobenchError):
    """Reward weight fitting requires at least one demonstration."""


class InvalidQuery(DemobenchError):
    """A trajectory query endpoint is outside joint limits."""


# --- bus ---

class PortInUse(DemobenchError):
    """The requested listening port is already bound."""


class NotConnected(DemobenchError):
    """The bus client is not connected to a hub."""


# --- harness ---

class NoHighRegion(DemobenchError):
    """Rejection sampling never found a start state with high feature value."""


class DegenerateRange(DemobenchError):
    """The ground-truth feature is constant over the evaluation sample."""


class InsufficientTraces(DemobenchError):
    """A trace directory holds fewer traces than a trial needs."""
