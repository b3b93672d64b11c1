"""Photon-statistics toolkit: HBT correlators, Siegert tests and emitter simulators."""

__version__ = "0.1.0"
