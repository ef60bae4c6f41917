"""exalab: desk-scale experimentation-as-a-service for simulated 5G setups."""

__version__ = "0.1.0"
