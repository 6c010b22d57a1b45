"""Safe and comfortable locomotion learning on a desk-scale robot proxy."""

__version__ = "0.1.0"
