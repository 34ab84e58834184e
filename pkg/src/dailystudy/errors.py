"""Exception hierarchy shared by every part of the study backend."""


class StudyError(Exception):
    """Base class for all errors raised by the study backend."""


class ConfigError(StudyError, ValueError):
    pass


class ValidationError(StudyError):
    """An event was rejected before it reached the log."""


class IllegalTransition(ValidationError):
    pass


class OutOfWindow(StudyError):
    pass


class IndexOutOfRange(StudyError, IndexError):
    pass


# enrollment
class ConsentIncomplete(StudyError):
    pass


class InvalidMeasurement(StudyError):
    pass


class InvalidDemographics(StudyError):
    pass


class DeviceNotSupported(StudyError):
    pass


class DeviceAlreadyEnrolled(StudyError):
    pass


class DuplicateHit(StudyError):
    pass


class UnknownAssignment(StudyError):
    pass


# daily measurements
class UnknownParticipant(StudyError):
    pass


class NotActive(StudyError):
    """The participant cannot submit measurements in its current state."""


class DuplicateDay(StudyError):
    pass


class WindowExpired(StudyError):
    pass


# gateways
class GatewayError(StudyError):
    """Transient or permanent failure talking to the crowd platform."""


class UnknownWorker(GatewayError):
    pass


class AlreadyResolved(GatewayError):
    pass


class UnknownQualification(GatewayError):
    pass


class NotQualified(GatewayError):
    pass


class PushGatewayError(StudyError):
    pass


# persistence
class StorageError(StudyError):
    pass


class CorruptLog(StorageError):
    def __init__(self, message: str, line_no: int, offset: int):
        super().__init__(f"{message} (line {line_no}, byte offset {offset})")
        self.line_no = line_no
        self.offset = offset


# analytics
class EmptyMatrix(StudyError, ValueError):
    pass
