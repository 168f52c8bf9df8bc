"""Feed-forward networks trained with the MLR loss and a closed-form ridge output layer."""

__version__ = "0.1.0"
