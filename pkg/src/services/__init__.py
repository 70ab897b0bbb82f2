"""服务层模块 - MESFET 问题构造与实验驱动"""

from .experiment_service import (
    EnergySeries,
    ExperimentService,
    IVRow,
    IVTable,
    SteadyResult,
    TransientSeries,
    drain_current,
    energy_decay_run,
    iv_sweep,
    ramp_to_bias,
    run_steady,
    transient_switch,
)
from .mesfet_builder import (
    ScaledDevice,
    build_mesfet,
    continue_from,
    mesfet_mesh,
    nondimensionalize,
    rebias_setup,
    rebias_state,
    with_reference,
)

__all__ = [
    "EnergySeries",
    "ExperimentService",
    "IVRow",
    "IVTable",
    "SteadyResult",
    "TransientSeries",
    "drain_current",
    "energy_decay_run",
    "iv_sweep",
    "ramp_to_bias",
    "run_steady",
    "transient_switch",
    "ScaledDevice",
    "build_mesfet",
    "continue_from",
    "mesfet_mesh",
    "nondimensionalize",
    "rebias_setup",
    "rebias_state",
    "with_reference",
]
