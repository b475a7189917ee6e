"""Command-line layer: configuration, checkpoints, records, reports.

Kept import-light so thread environment variables can be set before the
numerics stack loads.
"""
