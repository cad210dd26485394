"""End-to-end training and CLI tests."""
