"""Socially-optimal mobility toolkit."""
