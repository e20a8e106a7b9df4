from .base import Driver, DriverConfigError, DriverError, Generation, TokenStream
from .live import EndpointConfig, LiveDriver, LiveStream
from .recording import RecordingDriver, record_session
from .replay import ReplayCursor, ReplayDriver, ReplayFormatError, ReplayTrace

__all__ = [
    "Driver",
    "DriverConfigError",
    "DriverError",
    "EndpointConfig",
    "Generation",
    "LiveDriver",
    "LiveStream",
    "RecordingDriver",
    "ReplayCursor",
    "ReplayDriver",
    "ReplayFormatError",
    "ReplayTrace",
    "TokenStream",
    "record_session",
]
