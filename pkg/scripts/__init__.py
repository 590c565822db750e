"""Command-line entry points for clinevent."""
