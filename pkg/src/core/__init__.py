"""Settings, errors, data models and worker helpers."""
