# src/utils/constants.py
"""
Constants, presets and ablation suites for the mixnorm harness
"""

# Numerical and training defaults
DEFAULT_VALUES = {
    'MOMENTUM': 0.1,
    'NORM_EPS': 1e-5,
    'TRIPLET_MARGIN': 0.3,
    'DCR_LAMBDA': 0.2,
    'CENTER_LOSS_LAMBDA': 5e-4,
    'CENTER_UPDATE_RATE': 0.5,
    'BASE_LR': 3.5e-4,
    'EPOCHS': 60,
    'DECAY_EPOCHS': [30, 50],
    'DECAY_FACTOR': 0.1,
    'ADAM_BETAS': (0.9, 0.999),
    'ADAM_EPS': 1e-8,
    'FD_STEP': 1e-5,
    'GRADCHECK_TOLERANCE': 1e-6,
    'END_TO_END_TOLERANCE': 1e-5,
    'QUERY_FRACTION': 0.3,
    'CMC_RANKS': (1, 5, 10),
}

# Exit-code convention shared by every CLI verb
EXIT_CODES = {
    'OK': 0,
    'CHECK_FAILED': 1,
    'CONFIG_ERROR': 2,
    'NUMERICAL_ERROR': 3,
}

SEED_ENV_VAR = 'MIXNORM_SEED'
LOG_LEVEL_ENV_VAR = 'LOG_LEVEL'

CHECKPOINT_FORMAT_VERSION = 1

# Output file names inside a run directory
RUN_FILES = {
    'CHECKPOINT': 'checkpoint.json',
    'METRICS': 'metrics.csv',
    'REPORT': 'eval_report.json',
    'CONFIG': 'config.json',
    'COMPARISON': 'comparison.csv',
    'SUMMARY': 'summary.csv',
    'EMBEDDINGS': 'embeddings.csv',
    'PROJECTION': 'projection.csv',
}

METRICS_COLUMNS = [
    'epoch', 'loss_cls', 'loss_tri', 'loss_dcr', 'loss_total',
    'target_acc', 'map', 'cmc1', 'cmc5', 'cmc10',
]

COMPARISON_METRICS = ['target_acc', 'map', 'cmc1', 'cmc5', 'cmc10', 'center_distance']

CSV_FLOAT_FORMAT = '%.6f'

# Named experiment presets, expressed as overrides on the default config
PRESETS = {
    'baseline_bn': {
        'model': {'norm': 'bn'},
        'loss': {'regularizer': 'none', 'lam': 0.0},
    },
    'baseline_bn_dcr': {
        'model': {'norm': 'bn'},
        'loss': {'regularizer': 'dcr', 'lam': 0.2},
    },
    'baseline_dmn': {
        'model': {'norm': 'dmn'},
        'loss': {'regularizer': 'none', 'lam': 0.0},
    },
    'mixnorm_full': {
        'model': {'norm': 'dmn'},
        'loss': {'regularizer': 'dcr', 'lam': 0.2},
    },
    'mixnorm_shared_partition': {
        'model': {'norm': 'dmn'},
        'loss': {'regularizer': 'dcr', 'lam': 0.2},
        'dmn': {'shared_partition': True},
    },
    'mixnorm_max_group_d': {
        'model': {'norm': 'dmn'},
        'loss': {'regularizer': 'dcr', 'lam': 0.2},
        'dmn': {'max_group': 'd'},
    },
    'mixnorm_fixed_c1': {
        'model': {'norm': 'dmn'},
        'loss': {'regularizer': 'dcr', 'lam': 0.2},
        'dmn': {'fixed_c': 1},
    },
    'mixnorm_center_loss': {
        'model': {'norm': 'dmn'},
        'loss': {'regularizer': 'center', 'lam': 5e-4},
    },
    'rs_baseline': {
        'sampler': 'rs',
        'model': {'norm': 'bn'},
        'loss': {'regularizer': 'none', 'lam': 0.0},
    },
}

# Ablation suites: ordered cells (label, preset) and the reference label wins are counted against.
# The 'layers' and 'lambda' suites are expanded programmatically from these seeds.
ABLATION_SUITES = {
    'components': {
        'reference': 'baseline',
        'cells': [('baseline', 'baseline_bn'), ('baseline+dmn', 'baseline_dmn'),
                  ('baseline+dmn+dcr', 'mixnorm_full')],
    },
    'ddc': {
        'reference': 'shared_partition',
        'cells': [('shared_partition', 'mixnorm_shared_partition'), ('independent_partition', 'mixnorm_full')],
    },
    'max_group': {
        'reference': 'max_group_d',
        'cells': [('max_group_d', 'mixnorm_max_group_d'), ('max_group_d_minus_1', 'mixnorm_full')],
    },
    'sampling': {
        'reference': 'rs_baseline',
        'cells': [('rs_baseline', 'rs_baseline'), ('us_baseline', 'baseline_bn'), ('us_mixnorm', 'mixnorm_full')],
    },
    'dcr_vs_cl': {
        'reference': 'center_loss',
        'cells': [('center_loss', 'mixnorm_center_loss'), ('dcr', 'mixnorm_full')],
    },
    'dcr_baselines': {
        'reference': 'baseline',
        'cells': [('baseline', 'baseline_bn'), ('baseline+dcr', 'baseline_bn_dcr'),
                  ('baseline+dmn', 'baseline_dmn'), ('baseline+dmn+dcr', 'mixnorm_full')],
    },
    'layers': {
        'reference': 'baseline',
        'cells': [('baseline', 'baseline_bn'), ('all', 'mixnorm_full')],
    },
    'fixed_c1': {
        'reference': 'baseline',
        'cells': [('baseline', 'baseline_bn'), ('fixed_c1', 'mixnorm_fixed_c1'), ('random_c', 'mixnorm_full')],
    },
    'lambda': {
        'reference': 'lambda_0',
        'cells': [('lambda_0', 'baseline_dmn')],
    },
}

LAMBDA_SWEEP = [0.05, 0.1, 0.2, 0.5, 1.0]
