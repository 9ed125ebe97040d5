"""
Small validation helpers shared by the value types of every package.

Each helper raises TypeError for a value of the wrong kind and ValueError for a
value of the right kind that breaks a range or shape rule, with messages of the
form "Invalid value for '<name>': Expected ..., but got ...".
"""
from __future__ import annotations

import math

import numpy as np


def validate_type(value, expected_type, error_message: str) -> None:
    """
    Checks that a value is an instance of the expected type.

    Args:
        value: The value to be checked.
        expected_type: A type or tuple of types the value must be an instance of.
        error_message: The message carried by the TypeError.

    Raises:
        TypeError: If the value is not an instance of the expected type.
    """
    if not isinstance(value, expected_type):
        raise TypeError(error_message)


def as_vector(value, name: str, size: int = 2) -> np.ndarray:
    """
    Converts a sequence to a finite float64 vector of the given size.

    Raises:
        TypeError: If the value cannot be read as numbers.
        ValueError: If the shape is wrong or an entry is not finite.
    """
    try:
        vector = np.asarray(value, dtype=np.float64).reshape(-1)
    except (TypeError, ValueError):
        raise TypeError(f"Invalid value for '{name}': Expected a numeric vector, not a {type(value).__name__}")
    if vector.shape != (size,):
        raise ValueError(f"Invalid value for '{name}': Expected a vector of length {size}, but got shape {vector.shape}.")
    if not np.all(np.isfinite(vector)):
        raise ValueError(f"Invalid value for '{name}': Expected finite entries, but got {vector.tolist()}.")
    return vector


def as_scalar(value, name: str, minimum: float | None = None, strict: bool = False) -> float:
    """
    Converts a number to a finite float, optionally bounded from below.

    Args:
        value: The number to convert.
        name: Field name used in error messages.
        minimum: Optional lower bound.
        strict: When True the bound is exclusive.

    Raises:
        TypeError: If the value is not a real number.
        ValueError: If the value is not finite or breaks the bound.
    """
    validate_type(value, (int, float, np.integer, np.floating),
                  f"Invalid value for '{name}': Expected a real number, not a {type(value).__name__}")
    if isinstance(value, (bool, np.bool_)):
        raise TypeError(f"Invalid value for '{name}': Expected a real number, not a bool")
    number = float(value)
    if not math.isfinite(number):
        raise ValueError(f"Invalid value for '{name}': Expected a finite number, but got {number}.")
    if minimum is not None:
        if strict and number <= minimum:
            raise ValueError(f"Invalid value for '{name}': Expected a number > {minimum}, but got {number}.")
        if not strict and number < minimum:
            raise ValueError(f"Invalid value for '{name}': Expected a number >= {minimum}, but got {number}.")
    return number
