"""Market, mechanism and team-coordination services."""
