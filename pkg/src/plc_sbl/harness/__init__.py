"""Configuration-driven BER sweeps over receivers, noise models and SNR."""
from .config import (ESTIMATORS, ConfigError, ExperimentConfig, default_noise, load_config,
                     save_config)
from .simulate import (CSV_HEADER, BerRecord, SimulationError, background_power, crossing_snr,
                       format_csv, parse_csv, read_csv, run_point, run_sweep, simulate_block,
                       snr_gain, write_csv)

__all__ = [
    "CSV_HEADER", "ESTIMATORS", "BerRecord", "ConfigError", "ExperimentConfig",
    "SimulationError", "background_power", "crossing_snr", "default_noise", "format_csv",
    "load_config", "parse_csv", "read_csv", "run_point", "run_sweep", "save_config",
    "simulate_block", "snr_gain", "write_csv",
]
