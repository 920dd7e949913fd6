# Integrator (seconds)
DT = 1e-4
SAMPLE_INTERVAL = 1e-3

# Filtered concurrent learning
Y_F_BOUND = 1e6
# relative rank cutoff for Y_f; None uses p * eps
RANK_TOL = None

# Least-squares gain repair
GAMMA_FLOOR = 1e-8
GAMMA_REPAIR_TOL = 1e-3

# Barrier map
BOUNDARY_TOL = 1e-12
EXP_LIMIT = 700.0

# Abort a run once any state block norm exceeds this
DIVERGENCE_LIMIT = 1e9

# Bellman error extrapolation grid
EXTRAP_COUNT = 100
EXTRAP_HALF_WIDTH = 2.0
SEED = 0

# Files
SCENARIO_DIR = "scenarios"
CSV_FLOAT_FORMAT = "%.17g"


def _get_cfg(name: str, default):
    return globals().get(name, default)
