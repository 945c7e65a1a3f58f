"""
Built-in experiment configs used when a subcommand runs without --config.
Each carries the provenance of its parameter set.
"""

from typing import Any, Dict

BS_TRACKING: Dict[str, Any] = {
    "provenance": "constant-beta tracking under Black-Scholes: S0=50, X0=100, r=0.05, sigma=0.2, T=0.5",
    "model": {"kind": "bs", "r": 0.05, "sigma": 0.2, "s0": 50.0},
    "grid": {"t0": 0.0, "T": 0.5},
    "target": {"beta": 2.0, "betas": [-1.0, 2.0, 3.0]},
    "instruments": [{"kind": "futures_index", "maturity": 0.5}],
    "run": {"seed": 20240501, "paths": 100, "x0": 100.0, "method": "solve"},
}

# Contracts whose holdings are exported by `track`
BS_HOLDINGS = [
    {"kind": "call", "maturity": 0.5, "strike": 40.0},
    {"kind": "call", "maturity": 0.5, "strike": 50.0},
    {"kind": "call", "maturity": 0.5, "strike": 60.0},
    {"kind": "futures_index", "maturity": 0.5},
    {"kind": "futures_index", "maturity": 1.0},
    {"kind": "futures_index", "maturity": 2.0},
]

CIR_VXX: Dict[str, Any] = {
    "provenance": "volatility ETN roll under CIR: S0=0.2, kappa=20, theta=0.2, sigma=0.4, monthly cycles",
    "model": {"kind": "cir", "r": 0.0, "kappa": 20.0, "theta": 0.2, "sigma": 0.4, "s0": 0.2},
    "grid": {"t0": 0.0, "T": 0.5},
    "vxx": {"cycle": 1.0 / 12.0, "v0": 100.0, "beta": 1.0, "contract": "front"},
    "run": {"seed": 20240502, "paths": 200},
}

CIR_CALIBRATION: Dict[str, Any] = {
    "provenance": "synthetic CIR term structure: kappa=20, theta=0.2, S=0.25, maturities 1,2,3,6 months",
    "model": {"kind": "cir", "r": 0.0, "kappa": 20.0, "theta": 0.2, "sigma": 0.4, "s0": 0.25},
    "calibration": {"s_now": 0.25, "maturities": [1 / 12, 2 / 12, 3 / 12, 6 / 12]},
    "run": {"seed": 20240503},
}

SIMULATE: Dict[str, Any] = {
    "provenance": "CIR sample paths at the roll-strategy parameters",
    "model": dict(CIR_VXX["model"]),
    "grid": {"t0": 0.0, "T": 0.5},
    "run": {"seed": 20240504, "paths": 10},
}

HESTON: Dict[str, Any] = {"kind": "heston", "r": 0.02, "kappa": 3.0, "theta": 0.04, "nu": 0.3, "rho": -0.6, "s0": 100.0, "y0": 0.04}

CSQR: Dict[str, Any] = {
    "kind": "csqr", "r": 0.0, "gamma": 2.0, "kappa": 1.0, "theta": 0.2,
    "sigma": 0.3, "nu": 0.3, "rho": 0.5, "s0": 0.2, "y0": 0.2,
}

VERIFY: Dict[str, Any] = {
    "provenance": "invariant suite: slippage, portfolio value identity, elasticities, weights, calibration, roll strategy",
    "model": dict(BS_TRACKING["model"]),
    "grid": {"t0": 0.0, "T": 0.5},
    "run": {"seed": 20240505, "paths": 100},
}
