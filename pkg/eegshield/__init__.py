"""Class-wise perturbations that conceal private attributes in EEG datasets"""

from .error_handler import (
    ErrorHandler,
    ErrorLevel,
    ErrorCategory,
    ErrorContext,
    ShieldError,
    ValidationError,
    DatasetError,
    FileSystemError,
    SignalError,
    ModelError,
    OptimizationError,
    ConfigError,
    ReportError,
    UsageError,
    error_handler,
)
from .eeg_dataset import EEGDataset, Trial, load_dataset, save_dataset
from .perturbation import (
    PerturbationBank,
    ProtectionConfig,
    apply_perturbations,
    generate_protected_dataset,
    remove_perturbations,
)
