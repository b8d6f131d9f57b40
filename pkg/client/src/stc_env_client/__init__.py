"""Reference client for the stclab environment bridge."""

from .env import BridgeConnectionError, BridgeError, RemoteEnv
from .policies import LqrMirrorPolicy, RandomGridPolicy

__version__ = "0.1.0"
