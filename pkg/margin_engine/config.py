import os

from dotenv import dotenv_values, load_dotenv

from .errors import InvalidConfigError

# Keys accepted in a run config file (key=value). CLI flags use the same
# names with dashes; an explicit flag beats the file, the file beats defaults.
RUN_CONFIG_KEYS = {
    "data", "data_dir", "loss", "r", "theta", "eta", "hinge_margin", "theta_scale_a",
    "adaptive_theta", "layers", "epochs", "batch_size", "learning_rate", "momentum",
    "seed", "telemetry_every", "bound_telemetry", "delta", "classes", "dim", "per_class",
    "separation", "train_size", "test_size", "fraction", "holdout",
}


class Settings:
    def __init__(self):
        load_dotenv(override=False)
        base_dir = os.getcwd()
        self.base_dir = base_dir
        self.output_dir = os.path.abspath(os.environ.get("MARGIN_ENGINE_OUTPUT_DIR", os.path.join(base_dir, "runs")))
        self.data_dir = os.path.abspath(os.environ.get("MARGIN_ENGINE_DATA_DIR", os.path.join(base_dir, "data")))
        self.workers = int(os.environ.get("MARGIN_ENGINE_WORKERS", "1"))
        self.log_level = os.environ.get("MARGIN_ENGINE_LOG_LEVEL", "INFO").upper()
        self.delta = float(os.environ.get("MARGIN_ENGINE_DELTA", "0.1"))
        self.registry_enabled = (
            os.environ.get("MARGIN_ENGINE_REGISTRY", "1").strip().lower()
            not in ("0", "false", "no")
        )
        self.registry_path = os.path.join(self.output_dir, "registry.db")


def load_run_config(path):
    """Parse a key=value run config; unknown keys are rejected."""
    if not os.path.exists(path):
        raise InvalidConfigError(f"config file {path} does not exist")
    values = {k.strip().lower().replace("-", "_"): v for k, v in dotenv_values(path).items()}
    unknown = sorted(set(values) - RUN_CONFIG_KEYS)
    if unknown:
        raise InvalidConfigError(f"unknown keys in {path}: {', '.join(unknown)}")
    return {k: v for k, v in values.items() if v is not None}
