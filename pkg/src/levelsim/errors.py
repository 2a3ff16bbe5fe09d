"""Exception hierarchy shared by all modules."""


class LevelSimError(Exception):
    """Base class for errors raised by levelsim."""


class ConfigError(LevelSimError, ValueError):
    """Invalid model or run configuration.

    ``problems`` lists every violation found, not only the first.
    """

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class StateError(LevelSimError, RuntimeError):
    """Operation requires state that was not recorded (e.g. genealogy)."""


class UnsupportedError(LevelSimError, NotImplementedError):
    """Requested combination of features is not supported."""


class SimulationOverflow(LevelSimError, RuntimeError):
    """A trajectory exceeded its event cap."""
