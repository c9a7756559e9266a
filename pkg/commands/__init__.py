"""Sub-command modules for the tabbin CLI."""
