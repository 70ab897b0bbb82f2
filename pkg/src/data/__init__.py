"""数据模块 - 器件描述与网格文件"""

from .device_spec import BiasPoint, DeviceSpec, GateState, PhysicalConstants, Scales

__all__ = ["BiasPoint", "DeviceSpec", "GateState", "PhysicalConstants", "Scales"]
