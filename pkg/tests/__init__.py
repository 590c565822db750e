"""clinevent test suite."""
