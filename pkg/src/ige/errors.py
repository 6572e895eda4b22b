"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    pass


class RankError(ValueError):
    """Transmit power matrix is rank deficient."""

    def __init__(self, rank: int, n: int, msg: str | None = None):
        self.rank = rank
        self.n = n
        super().__init__(msg or f"matrix rank {rank} < {n} columns")


class SchedulingError(RuntimeError):
    def __init__(self, msg: str, node=None):
        self.node = node
        super().__init__(msg)


class AllocationError(ValueError):
    pass
