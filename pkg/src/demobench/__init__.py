"""demobench: a virtual-robot demonstration-capture and reward-learning
workbench.

Subpackages map to the pipeline stages: URDF models (`model`), kinematics
(`kinematics`), environments and ground-truth features (`scene`),
demonstration capture (`capture`), feature and reward learning (`learning`),
the pub/sub hub (`bus`), and the experiment harness (`harness`).
"""

__version__ = "0.1.0"

from .model import RobotModel, parse_urdf, parse_urdf_file  # noqa: F401
from .scene import Scene, load_scene, load_scene_and_model  # noqa: F401
