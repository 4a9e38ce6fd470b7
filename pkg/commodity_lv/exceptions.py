"""
Error hierarchy for the commodity curve leverage engine
"""


class CommodityLVError(Exception):
    """Base class for all engine errors"""


class MarketDataError(CommodityLVError, ValueError):
    """Market input files violate their schema or invariants"""


class CalibrationError(CommodityLVError):
    """Backbone or leverage calibration could not complete"""


class TivError(CommodityLVError, ValueError):
    """Total implied variance surface evaluated outside its domain"""


class PricingError(CommodityLVError, ValueError):
    """Black-76 inputs or prices outside their valid region"""


class SimulationError(CommodityLVError):
    """Monte Carlo setup or stepping failed"""


class ArtifactError(CommodityLVError):
    """Calibration artifacts are missing or do not match the run config"""


class ConfigError(CommodityLVError):
    """Run configuration is missing or invalid"""
