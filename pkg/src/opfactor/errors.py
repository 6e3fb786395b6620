"""Structured exceptions raised across the package."""


class FactorizationError(Exception):
    """Base class for all structured errors raised by opfactor."""


class DimensionMismatchError(FactorizationError):
    """Two objects that must share a dimension do not."""

    def __init__(self, expected, got, what="vector"):
        self.expected = expected
        self.got = got
        super().__init__(f"{what}: expected dimension {expected}, got {got}")


class UnsupportedKindError(FactorizationError):
    """Operation not defined for this seminorm kind."""


class NotSeparatingError(FactorizationError):
    """Seminorm family fails to separate points of the grid space."""


class OutsideCoverError(FactorizationError):
    """Query point lies outside every ball of the cover."""

    def __init__(self, min_distance, delta):
        self.min_distance = min_distance
        self.delta = delta
        super().__init__(
            f"point outside cover: nearest center at distance "
            f"{min_distance:.6g}, cover radius {delta:.6g}"
        )


class IncompatibleModulusError(FactorizationError):
    """Site data violates the modulus needed for exact extension."""

    def __init__(self, pair, distance, gap, bound):
        self.pair = pair
        self.distance = distance
        self.gap = gap
        self.bound = bound
        super().__init__(
            f"modulus incompatible with data: sites {pair} at distance "
            f"{distance:.6g} have value gap {gap:.6g} > omega bound {bound:.6g}"
        )


class RankDeficientError(FactorizationError):
    """Unregularized least-squares system is rank deficient."""


class BudgetExceededError(FactorizationError):
    """Requested tolerance unreachable within the given budgets."""

    def __init__(self, message, best_error=None, target=None, result=None):
        self.best_error = best_error
        self.target = target
        self.result = result
        super().__init__(message)


class InternalConsistencyError(FactorizationError):
    """A condition that should hold up to round-off failed."""


class BundleIntegrityError(FactorizationError):
    """Serialized factorization bundle is corrupt or incomplete."""


class ConfigError(FactorizationError):
    """Experiment configuration is malformed."""

    def __init__(self, message, field=None):
        self.field = field
        super().__init__(message if field is None else f"[{field}] {message}")
