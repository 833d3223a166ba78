from .config import ExperimentConfig, Step, config_from_text, load_config, parse_steps
from .metrics import eval_ber, eval_nmse, nmse_db, wilson_interval
from .pipeline import ResultRow, run_pipeline
from .report import emit_report, read_rows_csv, rows_to_csv

__all__ = [
    "ExperimentConfig", "Step", "config_from_text", "load_config", "parse_steps",
    "eval_ber", "eval_nmse", "nmse_db", "wilson_interval",
    "ResultRow", "run_pipeline",
    "emit_report", "read_rows_csv", "rows_to_csv",
]
