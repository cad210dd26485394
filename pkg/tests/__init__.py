"""fuselab test suite."""
