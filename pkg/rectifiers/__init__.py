"""
Rectifiers package initialization
"""
from .orchestrator import EraseOrchestrator
from .base_rectifier import RegionRectifier, RegionResult
from .axis_aligned_rectifier import AxisAlignedRectifier
from .perspective_rectifier import PerspectiveRectifier
from .tps_rectifier import TpsRectifier

__all__ = [
    'EraseOrchestrator',
    'RegionRectifier',
    'RegionResult',
    'AxisAlignedRectifier',
    'PerspectiveRectifier',
    'TpsRectifier'
]
