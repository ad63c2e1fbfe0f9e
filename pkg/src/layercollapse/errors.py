"""Exception hierarchy. Every error carries a short category used by the CLI."""


class LayerCollapseError(Exception):
    category = "error"


class DimensionError(LayerCollapseError, ValueError):
    category = "dimension"


class ContractError(LayerCollapseError, RuntimeError):
    category = "contract"


class NumericError(LayerCollapseError, ArithmeticError):
    category = "numeric"


class UnsupportedConfigurationError(LayerCollapseError, ValueError):
    category = "unsupported"


class InsufficientDataError(LayerCollapseError, ValueError):
    category = "insufficient-data"


class UnknownArchitectureError(LayerCollapseError, KeyError):
    category = "lookup"

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class ConfigError(LayerCollapseError, ValueError):
    category = "config"

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class FormatError(LayerCollapseError, ValueError):
    """Malformed binary file. ``offset`` is the byte position where parsing failed."""

    category = "format"

    def __init__(self, message, offset):
        self.offset = offset
        super().__init__(f"{message} (at byte offset {offset})")


class DivergenceError(LayerCollapseError, ArithmeticError):
    category = "divergence"
