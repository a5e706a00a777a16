"""Multi-task ultrasound CNN, GRAD-CAM maps and sign-gradient attacks on both."""

__version__ = "0.1.0"
