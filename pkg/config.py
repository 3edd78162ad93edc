import os
import logging
from dotenv import load_dotenv

# Load .env file if present
load_dotenv()

# -------------------
# App Configurations
# -------------------
APP_NAME = "Mirror Coupling Lab"
APP_VERSION = "1.0.0"

# Server settings
HOST = os.getenv("HOST", "127.0.0.1")
PORT = int(os.getenv("PORT", 8000))
DEBUG = os.getenv("DEBUG", "false").lower() == "true"

# Allowed CORS origins (default: all)
ALLOWED_ORIGINS = os.getenv("ALLOWED_ORIGINS", "*").split(",")

# Results folder (CSV curves, JSON reports, run manifests)
OUTPUT_DIR = os.getenv("COUPLING_OUTPUT_DIR", "results")

# -------------------
# Experiment defaults
# -------------------
CONFIG_SCHEMA_VERSION = 1
DEFAULT_SEED = int(os.getenv("COUPLING_SEED", 20240611))
DEFAULT_THREADS = int(os.getenv("COUPLING_THREADS", 1))

# -------------------
# Numerical tolerances
# -------------------
EXACT_TOL = 1e-12
H_BAND = 1e-12
GEODESIC_TOL = 1e-10
SE_MULTIPLIER = 3.0
SPHERE_SERIES_TOL = 1e-15
SPHERE_MIN_T = 1e-4
MIRROR_TOL = 1e-9
GASKET_MAX_LEVEL = 12
CHAIN_MAX_STATES = int(os.getenv("COUPLING_CHAIN_MAX_STATES", 2500))

# -------------------
# Logging Configuration
# -------------------
LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO").upper()

logging.basicConfig(
    level=LOG_LEVEL,
    format="%(asctime)s | %(levelname)s | %(name)s | %(message)s",
)

logger = logging.getLogger(APP_NAME)
