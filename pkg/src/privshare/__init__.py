"""Re-identification risk assessment, cluster anonymization and utility evaluation
for tabular patient cohorts."""

from .schema import Cohort, Role, Schema, load_cohort, write_cohort

__version__ = "0.1.0"

__all__ = ["Cohort", "Role", "Schema", "load_cohort", "write_cohort", "__version__"]
