"""Forecasting models behind a common fit / forecast interface."""
from .arima import ArimaForecaster, ArimaParams, arima_forecast, fit_arima
from .base import Forecaster, forecaster_kinds, parallel_map
from .boosted import ArTreeForecaster, ChainForecaster, LevelGBT, RegressorChain, StationClassifier
from .composite import CompositeForecaster, chain_layout, complete_bottom_up
from .seasonal import SeasonalStat
from .weights import EarlyStopping, exp_weights, fit_boosted

__all__ = [
    "ArimaForecaster", "ArimaParams", "arima_forecast", "fit_arima",
    "Forecaster", "forecaster_kinds", "parallel_map",
    "ArTreeForecaster", "ChainForecaster", "LevelGBT", "RegressorChain", "StationClassifier",
    "CompositeForecaster", "chain_layout", "complete_bottom_up",
    "SeasonalStat",
    "EarlyStopping", "exp_weights", "fit_boosted",
]
