"""Close-proximity quadcopter flight: simulator, cascaded controller, residual policy."""

__version__ = "0.1.0"
