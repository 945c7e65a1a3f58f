from app.models.domain import DerivativeSpec, InstrumentKind


def index_futures(maturity):
    return DerivativeSpec(InstrumentKind.FUTURES_INDEX, maturity)


def factor_futures(maturity):
    return DerivativeSpec(InstrumentKind.FUTURES_FACTOR, maturity)


def call(strike, maturity):
    return DerivativeSpec(InstrumentKind.CALL, maturity, strike)
