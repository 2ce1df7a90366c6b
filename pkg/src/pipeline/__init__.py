"""Scenario files, day-ahead runs and report emission."""
