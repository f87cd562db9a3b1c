"""Command-line harness: configuration, data, replicated runs and reports."""
