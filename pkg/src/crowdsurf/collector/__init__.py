from .client import CollectorClient, CollectorHTTPError, Reporter, ReportSummary, client_buffer
from .server import CollectorHTTPServer, make_server
from .store import (
    Collector,
    CollectorError,
    PayloadTooLarge,
    RegistrationGrant,
    ReportBatch,
    StorageUnavailable,
    StoredReport,
    Unauthorized,
    ValidationError,
    batch_from_json,
    record_from_json,
    record_to_json,
)

__all__ = [
    "Collector",
    "CollectorClient",
    "CollectorError",
    "CollectorHTTPError",
    "CollectorHTTPServer",
    "PayloadTooLarge",
    "RegistrationGrant",
    "ReportBatch",
    "ReportSummary",
    "Reporter",
    "StorageUnavailable",
    "StoredReport",
    "Unauthorized",
    "ValidationError",
    "batch_from_json",
    "client_buffer",
    "make_server",
    "record_from_json",
    "record_to_json",
]
