"""Test suite for the demand-response market solver."""
