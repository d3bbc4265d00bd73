from .compression import compress as compress
from .config import ALSConfig as ALSConfig
from .config import Config as Config
from .config import TrainConfig as TrainConfig
from .cp import CPKernel as CPKernel
from .cp import cp_als as cp_als
from .cp import normalize as normalize
from .cp import reconstruct as reconstruct
from .cp import truncate as truncate
from .exception import *  # noqa: F403
from .harness import Dataset as Dataset
from .harness import make_synthetic as make_synthetic
from .harness import train as train
from .model import BoundReport as BoundReport
from .model import CompressionPlan as CompressionPlan
from .model import PropertyTable as PropertyTable
from .model import VerificationReport as VerificationReport
from .network import LayerSpec as LayerSpec
from .network import NetworkModel as NetworkModel
from .network import forward as forward
from .network import preset as preset
from .properties import measure_properties as measure_properties
