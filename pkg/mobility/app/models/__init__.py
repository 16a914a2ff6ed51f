"""File-format contracts."""
