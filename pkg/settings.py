from PyQt6.QtCore import QSettings


class Settings:
    VALID_LOG_LEVELS = ['DEBUG', 'INFO', 'WARNING', 'ERROR']
    # key -> (type, default, lower bound exclusive)
    NUMERIC_KEYS = {
        'dt': (float, 1e-3, 0.0),
        'event_tolerance': (float, 1e-6, 0.0),
        'output_period': (float, 1e-2, 0.0),
        'max_jumps': (int, 1_000_000, 0),
        'chattering_run': (int, 5, 0),
        'ga_population': (int, 64, 1),
        'ga_generations': (int, 100, 0),
    }

    def __init__(self, settings=None):
        # Tests inject an INI-backed QSettings to keep the user's config untouched
        self.settings = settings if settings is not None else QSettings('Hyload', 'Hyload')

    def copy(self):
        """A separate QSettings handle on the same backing store, one per worker thread"""
        return Settings(QSettings(self.settings.fileName(), self.settings.format()))

    @classmethod
    def default(cls, key):
        if key == 'log_level':
            return 'INFO'
        return cls.NUMERIC_KEYS[key][1]

    def get(self, key, default=None):
        if default is None and (key in self.NUMERIC_KEYS or key == 'log_level'):
            default = self.default(key)
        value = self.settings.value(key, default)

        if key == 'log_level':
            value = str(value).upper()
            return value if value in self.VALID_LOG_LEVELS else default
        if key in self.NUMERIC_KEYS:
            kind, _, lower = self.NUMERIC_KEYS[key]
            try:
                value = kind(value)
            except (ValueError, TypeError):
                return default
            return value if value > lower else default

        return value

    def set(self, key, value):
        if key == 'log_level':
            value = str(value).upper()
            if value not in self.VALID_LOG_LEVELS:
                raise ValueError(f"Invalid log level: {value}")
        elif key in self.NUMERIC_KEYS:
            kind, _, lower = self.NUMERIC_KEYS[key]
            try:
                value = kind(value)
            except (ValueError, TypeError):
                raise ValueError(f"Invalid {key}: {value}")
            if not value > lower:
                raise ValueError(f"Invalid {key}: {value} (must be > {lower})")

        self.settings.setValue(key, value)
        self.settings.sync()

    def simulation_defaults(self):
        """Persisted defaults used to fill a scenario's simulation block"""
        return {key: self.get(key) for key in
                ('dt', 'event_tolerance', 'output_period', 'max_jumps', 'chattering_run')}
