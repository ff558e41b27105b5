"""Services package: seed derivation, report assembly and the run registry."""

from .report_builder import aggregate, build_report, write_report
from .seeding import derive_seed, rng_for

__all__ = ['aggregate', 'build_report', 'derive_seed', 'rng_for', 'write_report']
