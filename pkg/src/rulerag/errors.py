class ConfigError(ValueError):
    """Invalid configuration value or combination of options."""
