"""Configuration, datasets, experiment orchestration and the CLI."""
