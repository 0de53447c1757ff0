# trimlab defaults
DEFAULT_SEED = 20240611
DEFAULT_REPLICAS = 200
DEFAULT_SYSTEM = "iid"
DEFAULT_TRIM = "light:1"
DEFAULT_CHECKPOINTS = "1e5:1e7:x10"

# Reference law Y
DEFAULT_HORIZON = 1e4  # R, PPP truncation horizon
DEFAULT_REFERENCE_SAMPLES = 100_000
DEFAULT_WINDOW = (1.0, 10.0)  # cumulant oracle window [nlo, nhi)
DEFAULT_DECADE = (10.0, 100.0)  # tail slope fit range

# Acceptance thresholds
DEFAULT_TOLERANCE = 0.15
DEFAULT_KS_THRESHOLD = 0.06
DEFAULT_TV_THRESHOLD = 0.03
DEFAULT_CORR_TOLERANCE = 0.05
DEFAULT_DEVIATION = 0.2

# Poisson returns
DEFAULT_T_VALUES = (0.5, 1.0, 2.0)
DEFAULT_TRIM_LEVELS = (1, 2)

# Orbit points generated per chunk
CHUNK_SIZE = 1 << 16

OUTPUT_DIR = "data/results"
WORKERS_ENV = "TRIMLAB_WORKERS"
