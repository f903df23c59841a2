"""Exception hierarchy shared by all modules."""


class InfHarmError(ValueError):
    """Base class for all errors raised by this package."""


class InvalidDomainError(InfHarmError):
    pass


class SingularityError(InfHarmError):
    pass


class StencilError(InfHarmError):
    pass


class StepError(InfHarmError):
    pass


class SubdomainError(InfHarmError):
    """The subdomain is not compactly contained in the grid domain."""


class EmptySubdomainError(SubdomainError):
    pass


class InvalidJetError(InfHarmError):
    pass


class SupportViolationError(InfHarmError):
    pass


class ConfigError(InfHarmError):
    pass
