"""Backend, simulator and analysis tools for a 31-day paid daily-measurement study."""

from .config import DEFAULT_SCHEMES, HC, HI, LC, PaymentScheme, StudyConfig, load_config
from .payments import PayQuote, bonus_amount, cumulative_pay, equivalent_hourly, quote

__all__ = [
    "DEFAULT_SCHEMES", "HC", "HI", "LC", "PaymentScheme", "StudyConfig", "load_config",
    "PayQuote", "bonus_amount", "cumulative_pay", "equivalent_hourly", "quote",
]

__version__ = "0.1.0"
