"""Retinal and choroidal measurement from OCT volumes and SLO localiser images."""
from .container import Eye, ScanRecord, classify_scan, parse_fixture, parse_vol, read_vol, write_fixture, write_vol
from .pipeline import RunConfig, run_batch, run_file

__version__ = "0.1.0"

__all__ = [
    "Eye",
    "RunConfig",
    "ScanRecord",
    "classify_scan",
    "parse_fixture",
    "parse_vol",
    "read_vol",
    "run_batch",
    "run_file",
    "write_fixture",
    "write_vol",
]
