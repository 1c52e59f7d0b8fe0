"""Event Cloud classification and pose networks with frequency-domain feature filters."""

from .events import EventCloud, EventStream, WindowSpec, load_events, sample_event_cloud, stream_to_clouds
from .model import DATASETS, NetworkConfig, count_macs, forward, init_params

__version__ = "0.1.0"

__all__ = [
    "DATASETS", "EventCloud", "EventStream", "NetworkConfig", "WindowSpec", "count_macs",
    "forward", "init_params", "load_events", "sample_event_cloud", "stream_to_clouds",
]
