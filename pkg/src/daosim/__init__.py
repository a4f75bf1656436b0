"""Transactional object storage engine with epoch-versioned key-array objects."""

from .cluster import OC_SINGLE, OC_STRIPED, OC_STRIPED_R2, Cluster, ObjectClass, ObjectLayout
from .container import ContainerHandle, Pool, TxContext, pool_connect, pool_create
from .errors import *  # noqa: F401,F403
from .kvstore import Extent, ExtentWrite, FetchResult, ObjectId, TargetStore

__version__ = "0.1.0"
