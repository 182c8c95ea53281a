"""Universal one-sided distributed matrix multiplication, simulated.

Arbitrary per-operand partitionings and replication factors, Stationary
A/B/C data movement, slicing-based op generation, direct execution, and
cost-model-driven IR lowering over an instrumented one-sided fabric.
"""

from unimul.distmatrix import DistributedMatrix, TileCopy, TileView
from unimul.fabric import AccumulateMode, Fabric, FabricCounters, LinkTable
from unimul.kernels import BACKEND
from unimul.opgen import LocalMatMulOp, Stationarity
from unimul.runtime import ExecConfig, execute_multiply, run_direct, run_ir
from unimul.tiling import (
    Bounds2D,
    GridShape,
    Mapping,
    PartitionSpec,
    Range,
    Shape2D,
    TileIdx,
)

__version__ = "0.1.0"

__all__ = [
    "AccumulateMode",
    "BACKEND",
    "Bounds2D",
    "DistributedMatrix",
    "ExecConfig",
    "Fabric",
    "FabricCounters",
    "GridShape",
    "LinkTable",
    "LocalMatMulOp",
    "Mapping",
    "PartitionSpec",
    "Range",
    "Shape2D",
    "Stationarity",
    "TileCopy",
    "TileIdx",
    "TileView",
    "execute_multiply",
    "run_direct",
    "run_ir",
]
