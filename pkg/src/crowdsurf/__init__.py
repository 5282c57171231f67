"""Crowd-sourced auditing of HTTP traffic.

Rule-based request processing, anonymized crowd reporting to a collector,
third-party tracker detection, and feasibility modeling of data collection.
"""

from .anonymize import Anonymizer, anonymize, rotate_identity, sample
from .feasibility import CollectionTimeSimulator, collection_time, expected_visits, simulate_coupon
from .rules import RuleProcessor, evaluate, load_profile
from .trace import HttpRequestRecord, extract_query_params, is_third_party, parse_record, read_trace
from .tracker import TrackerDetector, detect, detect_from_trace, prevalence

__version__ = "0.1.0"

__all__ = [
    "Anonymizer",
    "CollectionTimeSimulator",
    "HttpRequestRecord",
    "RuleProcessor",
    "TrackerDetector",
    "anonymize",
    "collection_time",
    "detect",
    "detect_from_trace",
    "evaluate",
    "expected_visits",
    "extract_query_params",
    "is_third_party",
    "load_profile",
    "parse_record",
    "prevalence",
    "read_trace",
    "rotate_identity",
    "sample",
    "simulate_coupon",
]
