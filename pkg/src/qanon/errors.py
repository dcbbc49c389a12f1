"""Exception types shared across the package."""


class QanonError(ValueError):
    pass


class InvalidParameter(QanonError):
    pass


class InvalidFamily(QanonError):
    pass


class InvalidOperator(QanonError):
    pass


class InvalidInput(QanonError):
    pass
