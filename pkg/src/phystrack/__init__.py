"""Physics-aware 6-DoF object tracking at desk scale.

Subsystems: implicit collision geometry (`geometry`), SDF contact dynamics
(`dynamics`), sampling-based parameter identification (`sysid`), adaptive
vision/physics pose fusion (`tracker`), and synthetic experiments plus
metrics (`harness`).
"""

from .geometry import (
    BoxSdf,
    CapsuleSdf,
    GridSdf,
    ResidualSdf,
    SdfField,
    SphereSdf,
    UnionSdf,
    grid_from_field,
    load_grid_sdf,
    sample_entity_surface,
    save_grid_sdf,
    sdf_eval,
    sdf_gradient,
)
from .dynamics import (
    Contact,
    HalfPlane,
    MovingSphere,
    PhysicalParams,
    Pose,
    SceneConfig,
    SolverError,
    Trajectory,
    Twist,
    box_inertia,
    detect_contacts,
    integrate_pose,
    rollout,
    solve_contact_impulses,
    step,
    step_with_info,
)

__version__ = "0.1.0"
