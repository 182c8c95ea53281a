"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Raised for inconsistent matrix / partition / replication configuration."""


class OwnershipError(RuntimeError):
    """Raised when a rank touches a tile view it does not own."""


class ContractError(ValueError):
    """Raised when an operation's arguments violate its calling contract."""
