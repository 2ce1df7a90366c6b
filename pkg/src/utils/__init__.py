"""Numerical and operational helpers for the market solver."""
