"""Multi-agent collaborative perception on voxel and BEV grids.

Simulates a team of agents that sense a shared scene through cheap
LiDAR/camera proxies, exchange compressed voxel priors, heatmaps, and
per-instance features over a byte-budgeted wire protocol, and fuse what
they receive into per-agent bird's-eye-view maps and detections.
"""

from .config import RunConfig, config_from_dict, load_config, override_config
from .collab import (
    Heatmap,
    InstanceVector,
    discrepancy,
    heatmap_head,
    instance_complete,
    instance_refine,
    select_k_max,
    select_k_min,
)
from .detect import (
    Detection,
    average_precision,
    box_iou,
    decode_detections,
    recall_at,
    rotated_iou,
)
from .errors import (
    ConfigError,
    GenerationError,
    ParameterError,
    ProtocolError,
    ShapeError,
    WireError,
)
from .exchange import (
    BROADCAST,
    CommLedger,
    ExchangeResult,
    ProtocolParams,
    comm_volume,
    dense_map_log2,
    ideal_heatmap,
    plan_budget,
    reduction_vs,
    run_exchange,
)
from .experiments import (
    DEFAULT_SHAPE,
    RunMetrics,
    metrics_csv,
    metrics_table,
    run_on_scene,
    run_single,
    run_solo,
    sweep_agents,
    sweep_budget,
    sweep_completion_k,
    sweep_noise,
    sweep_refinement_k,
    sweep_strategy,
    write_report,
)
from .fusion import (
    CompressionStrategy,
    FusionResult,
    compress_voxel,
    decompress_voxel,
    fuse_heterogeneous,
    fuse_local,
    mix_voxel,
    occupancy_head,
)
from .grids import (
    BevFeature,
    GridShape,
    Pose,
    VoxelFeature,
    collapse_to_bev,
    relative_pose,
    resample_bev,
    warp_bev_to_frame,
    warp_to_frame,
)
from .scene import (
    AgentSpec,
    Box3D,
    NoiseSpec,
    Scene,
    SceneParams,
    WallSegment,
    generate_scene,
    load_scenario,
    save_scenario,
    visible_boxes,
)
from .sensors import camera_proxy_encode, depth_distribution, lidar_proxy_encode
from .weights import WeightSet, default_weights
from .wire import (
    BroadcastMsg,
    HeatmapMsg,
    MessageKind,
    QueryMsg,
    ReplyMsg,
    VoxelPriorMsg,
    decode_message,
    encode_message,
)

__version__ = "0.1.0"

__all__ = [
    "AgentSpec",
    "BROADCAST",
    "BevFeature",
    "Box3D",
    "BroadcastMsg",
    "CommLedger",
    "CompressionStrategy",
    "ConfigError",
    "DEFAULT_SHAPE",
    "Detection",
    "ExchangeResult",
    "FusionResult",
    "GenerationError",
    "GridShape",
    "Heatmap",
    "HeatmapMsg",
    "InstanceVector",
    "MessageKind",
    "NoiseSpec",
    "ParameterError",
    "Pose",
    "ProtocolError",
    "ProtocolParams",
    "QueryMsg",
    "ReplyMsg",
    "RunConfig",
    "RunMetrics",
    "Scene",
    "SceneParams",
    "ShapeError",
    "VoxelFeature",
    "VoxelPriorMsg",
    "WallSegment",
    "WeightSet",
    "WireError",
    "average_precision",
    "box_iou",
    "camera_proxy_encode",
    "collapse_to_bev",
    "comm_volume",
    "compress_voxel",
    "config_from_dict",
    "decode_detections",
    "decode_message",
    "decompress_voxel",
    "default_weights",
    "dense_map_log2",
    "depth_distribution",
    "discrepancy",
    "encode_message",
    "fuse_heterogeneous",
    "fuse_local",
    "generate_scene",
    "heatmap_head",
    "ideal_heatmap",
    "instance_complete",
    "instance_refine",
    "lidar_proxy_encode",
    "load_config",
    "load_scenario",
    "metrics_csv",
    "metrics_table",
    "mix_voxel",
    "occupancy_head",
    "override_config",
    "plan_budget",
    "recall_at",
    "reduction_vs",
    "relative_pose",
    "resample_bev",
    "rotated_iou",
    "run_exchange",
    "run_on_scene",
    "run_single",
    "run_solo",
    "save_scenario",
    "select_k_max",
    "select_k_min",
    "sweep_agents",
    "sweep_budget",
    "sweep_completion_k",
    "sweep_noise",
    "sweep_refinement_k",
    "sweep_strategy",
    "visible_boxes",
    "warp_bev_to_frame",
    "warp_to_frame",
    "write_report",
]
