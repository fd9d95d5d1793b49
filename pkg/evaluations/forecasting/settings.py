import os
from typing import Any, Dict

from dotenv import load_dotenv

# .env in the working directory wins over nothing, never over the real environment
load_dotenv(override=False)

BUILTIN_DATASETS = (
    "ETTh1", "ETTh2", "ETTm1", "ETTm2",
    "Exchange", "Weather", "Electricity", "Traffic",
)


def get_evaluation_config() -> Dict[str, Any]:
    """Directories used by runs, overridable through FORECAST_* variables"""
    return {
        "data_dir": os.getenv("FORECAST_DATA_DIR", "data"),
        "results_dir": os.getenv("FORECAST_RESULTS_DIR", "results/forecasting"),
        "log_dir": os.getenv("FORECAST_LOG_DIR", "logs"),
    }


def slow_tests_enabled() -> bool:
    return os.getenv("FORECAST_SLOW_TESTS", "0").strip().lower() in ("1", "true", "yes")


def builtin_dataset_path(name: str) -> str:
    """Map a builtin dataset name (ETTh1, Exchange, ...) to its CSV path"""
    return os.path.join(get_evaluation_config()["data_dir"], f"{name}.csv")
