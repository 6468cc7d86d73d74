"""Mean-field limit laboratory: tracer particles coupled to a Bose field."""

__version__ = "0.1.0"
