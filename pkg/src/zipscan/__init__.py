"""Spatial scan statistics for zero-inflated Poisson counts."""

from .detector import METHODS, ScanConfig, ScanOutcome, Scanner, scan_poisson, scan_zip, scan_zip_em
from .em import DegenerateDataError, EmConfig, em_fit
from .inference import NullReplicaConfig, significance
from .regions import CaseData, InputError, RegionMap, Zone, enumerate_circular_zones, read_region_csv

__all__ = [
    "METHODS", "CaseData", "DegenerateDataError", "EmConfig", "InputError",
    "NullReplicaConfig", "RegionMap", "ScanConfig", "ScanOutcome", "Scanner", "Zone",
    "em_fit", "enumerate_circular_zones", "read_region_csv", "scan_poisson", "scan_zip",
    "scan_zip_em", "significance",
]
__version__ = "0.1.0"
