"""Safety-critical lane-change control and simulation for CAV platoons."""

__version__ = "0.1.0"
