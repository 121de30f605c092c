"""Highway V2V wireless-charging simulation and MED dispatch control."""

from .battery import AmbientParams, BatteryState, VehicleBodyParams
from .env import DispatchEnv, EnvConfig, RewardConfig, StepResult
from .physics import (CircuitParams, CoilSpec, MisalignmentState,
                      QuadratureConfig, complete_elliptic, mutual_inductance,
                      psi, transfer_efficiency)
from .ppo import PpoHyper, evaluate, train
from .protocol import MedUnit, ProtocolConfig
from .traffic import IdmParams, MobilParams, RoadNetwork, TrafficConfig, Vehicle

__all__ = [
    "AmbientParams", "BatteryState", "VehicleBodyParams",
    "DispatchEnv", "EnvConfig", "RewardConfig", "StepResult",
    "CircuitParams", "CoilSpec", "MisalignmentState", "QuadratureConfig",
    "complete_elliptic", "mutual_inductance", "psi", "transfer_efficiency",
    "PpoHyper", "evaluate", "train",
    "MedUnit", "ProtocolConfig",
    "IdmParams", "MobilParams", "RoadNetwork", "TrafficConfig", "Vehicle",
]
