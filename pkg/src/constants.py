"""
Global Constants for the TTFS toolkit.
"""

# Network / coding
DEFAULT_TAU_C = 1.0  # conversion parameter (time units per unit activation)
DEFAULT_HIDDEN_WIDTH = 340
DEFAULT_NUM_CLASSES = 10

# Scheduler
DEFAULT_ZETA = 0.5  # safety margin of the initial window
DEFAULT_GAMMA = 10.0  # expansion factor of the adaptive t_max rule
REFERENCE_SLOPE_B0 = 1.0
TIGHTEN_MARGIN = 1e-9  # earliest calibration spike lands just after t_min

# Training
DEFAULT_BATCH_SIZE = 8
DEFAULT_LR0 = 5e-4
DEFAULT_FINETUNE_LR0 = 1e-5
LR_DECAY_BASE = 0.9
LR_DECAY_ITERATIONS = 5000
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

# Verification tolerances
EQUIVALENCE_TOL = 1e-9
SLOPE_UNIT_TOL = 1e-12

# Eigen solver
EIG_SWEEPS_PER_DIM = 100
EIG_EXCEPTIONAL_SHIFT_EVERY = 10

# Hardware constraints
DEFAULT_WEIGHT_CLIP = (1.0, 99.0)
LOW_BIT_WEIGHT_CLIP = (4.0, 96.0)  # used for q <= 4
DEFAULT_TIME_PERCENTILE = 99.0
DOUBLE_EXP_LINEAR_FRACTION = 0.5  # spans must stay below 0.5 * tau_1

# File formats
IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CHECKPOINT_MAGIC = b"TTFSCKPT"
CHECKPOINT_VERSION = 1

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
