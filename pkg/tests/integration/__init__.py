"""Integration tests for the harness and workflow components."""
