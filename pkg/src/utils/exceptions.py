# src/utils/exceptions.py
"""
Custom exceptions for the mixnorm harness
"""

from typing import Optional


class MixNormError(Exception):
    """Base exception for the harness"""
    pass


class ConfigurationError(MixNormError):
    """Configuration related errors"""

    def __init__(self, field_path: str, message: str):
        self.field_path = field_path
        super().__init__(f"{field_path}: {message}")


class TensorError(MixNormError):
    """Malformed or non-finite tensor data"""
    pass


class GradientCheckError(MixNormError):
    """Finite-difference oracle failures"""

    def __init__(self, message: str, coordinate: Optional[tuple] = None):
        self.coordinate = coordinate
        super().__init__(message)


class PartitionError(MixNormError):
    """Invalid partition policy or partition"""
    pass


class NormalizationError(MixNormError):
    """Normalization layer misuse (bad shapes, modes or domain ids)"""
    pass


class LossError(MixNormError):
    """Invalid loss inputs"""
    pass


class DataError(MixNormError):
    """Dataset generation and batch sampling errors"""
    pass


class ModelError(MixNormError):
    """Model construction errors"""
    pass


class NumericalError(MixNormError):
    """Non-finite values during training"""

    def __init__(self, iteration: int, message: str = "non-finite loss"):
        self.iteration = iteration
        super().__init__(f"{message} at iteration {iteration}")


class EvaluationError(MixNormError):
    """Evaluation precondition failures"""
    pass


class CheckpointError(MixNormError):
    """Checkpoint read/write errors"""
    pass
