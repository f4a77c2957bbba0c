"""diffdrive: differentiable driving simulator with search-based planning.

Modules:
    gradcore   reverse-mode tape (compiled core or pure-Python fallback)
    dynamics   kinematic bicycle + multi-agent stepping
    geometry   oriented boxes, collision / offroad detectors, ADE
    scenario   scenario files, synthetic generation, roadgraph queries
    policy     recurrent mixture policy and its observation featurizer
    training   policy training through the simulator, event classifier
    planner    imagined rollouts, losses, action search, control loop
    harness    suites, metrics export, ablations
    render     SVG scene rendering
"""

from diffdrive.backend import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
