"""Secure NOMA power allocation under limited-feedback CSI."""

__version__ = "0.1.0"
