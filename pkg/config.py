"""Configuration constants for the anti-spoofing pipeline"""

# Face crop geometry
IMAGE_SIZE = 256
IMAGE_CHANNELS = 6          # RGB + HSV
MAP_SIZE = 32               # auxiliary supervision maps
MAP_STRIDE = IMAGE_SIZE // MAP_SIZE
BOX_EXPANSION = 2.0         # face box width/height multiplier

# Labels and spoof types
LIVE = 'live'
SPOOF = 'spoof'
LABELS = [LIVE, SPOOF]
LABEL_INDEX = {LIVE: 0, SPOOF: 1}

SPOOF_TYPES = ['none', 'print', 'replay', 'composite']
SYNTHETIC_MOIRE = 'synthetic_moire'   # training-only: live crop blended with a synthetic moire pattern

# Auxiliary cues, in (depth, reflection, moire, boundary) order
CUES = ['depth', 'reflection', 'moire', 'boundary']
SPOOF_CUES = ['reflection', 'moire', 'boundary']
LOSS_KEYS = {'depth': 'l_d', 'reflection': 'l_r', 'moire': 'l_m', 'boundary': 'l_b'}
COUNT_KEYS = {'depth': 'n_d', 'reflection': 'n_r', 'moire': 'n_m', 'boundary': 'n_b'}

# Overall objective weights
DEFAULT_MU = 10.0
DEFAULT_LAMBDA = 0.1

# Backbone stage widths conv1..conv6 (conv3/conv4/conv5 = 128/196/128 feed MAFE)
FULL_STAGE_WIDTHS = [64, 128, 128, 196, 128, 128]
DESK_SCALE_DIVISOR = 4
FULL_HEAD_WIDTH = 64
MAFE_SIZE = 64
MFE_SIZE = 16

# Boundary composites
PASTE_SCALE_JITTER = (0.9, 1.1)
PASTE_SHIFT_JITTER = 8      # pixels

# Moire synthesis
MOIRE_ALPHA = 0.3
SYNTHETIC_MOIRE_FRACTION = 0.25   # spoof-half share when replay moire is replaced by synthetic moire
SIMILAR_FREQUENCY_TOLERANCE = 0.1
SIMILAR_ORIENTATION_TOLERANCE = 0.2
GRATING_FREQUENCY_RANGE = (0.15, 0.35)
GRATING_FREQUENCY_SPREAD = 0.05

# Moire estimator widths
MOIRE_BACKBONE_WIDTHS = [16, 32, 64]
MOIRE_ADAPT_WIDTH = 16
MOIRE_REFINE_WIDTH = 16

# Training defaults
DEFAULT_LEARNING_RATE = 1e-4
DEFAULT_BATCH_SIZE = 8
DEFAULT_COMPOSITE_FRACTION = 0.25
SMOKE_TEST_STEPS = 200
HISTORY_SMOOTHING_WINDOW = 10

# Evaluation
DEV_FRACTION = 0.2
RUN_DIR_ENV = 'MEGC_RUN_DIR'
DEFAULT_RUN_ROOT = 'runs'

# Colour mapping for report plots
CLASS_COLORS = {
    LIVE: '#2ca02c',
    SPOOF: '#d62728',
}

LOSS_COLORS = {
    'l_overall': '#000000',
    'l_cls': '#1f77b4',
    'l_d': '#FF8C42',
    'l_r': '#4ECDC4',
    'l_m': '#8A2BE2',
    'l_b': '#C70039',
}

# Axis titles for report plots
AXIS_TITLES = {
    'score': 'Spoof Score',
    'threshold': 'Threshold',
    'rate': 'Error Rate',
    'step': 'Training Step',
    'loss': 'Loss',
}
