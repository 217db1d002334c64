"""Sonar-image perception toolkit: small CNNs written on numpy, detection
proposals, patch matching and tracking, plus a synthetic scene generator."""

__version__ = "0.1.0"
