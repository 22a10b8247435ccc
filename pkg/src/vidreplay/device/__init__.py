from .base import DeviceAdapter, ScreenCapture, act, capture, scroll_gesture
from .bridge import AdbDevice
from .sim import (
    SimApp,
    SimDevice,
    SimElement,
    SimScreen,
    Transition,
    app_from_dict,
    hierarchy_xml,
    load_sim_app,
    render_screen,
    validate_app,
)

__all__ = [
    "AdbDevice",
    "DeviceAdapter",
    "ScreenCapture",
    "SimApp",
    "SimDevice",
    "SimElement",
    "SimScreen",
    "Transition",
    "act",
    "app_from_dict",
    "capture",
    "hierarchy_xml",
    "load_sim_app",
    "render_screen",
    "scroll_gesture",
    "validate_app",
]
