from .collision_core import CollisionKernel, assemble_L, gamma_bilinear
from .config import RunConfig, load_config
from .lattice import FourierLattice
from .model import KineticModel
from .velocity_space import VelocityGrid, build_grid
from dotenv import load_dotenv
load_dotenv()
