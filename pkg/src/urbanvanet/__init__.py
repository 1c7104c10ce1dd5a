"""Discrete-event simulation of cloud-assisted message dissemination in
obstacle-shadowed urban vehicular networks."""

__version__ = "0.1.0"
