"""Frozen reference values. Each is either a closed-form count or a published figure checked by arithmetic."""

# closed-form parameter counts at full scale (12 blocks, width 768)
LORA_RANK = 16
LORA_ADAPTERS_FULL = 12 * 2 * 2 * 768 * 16
assert LORA_ADAPTERS_FULL == 589_824
HEAD_768_TO_6 = 768 * 768 + 768 + 768 * 6 + 6
assert HEAD_768_TO_6 == 595_206
LORA_TOTAL_MILLIONS = 1.19
HEAD_MILLIONS = 0.60
RESNET_FULL_MILLIONS = 9.72
TRANSFORMER_BLOCK_FULL = 7_087_872

# head-only budget of the mini preset: 64 -> 32 -> 6
MINI_HEAD = 64 * 32 + 32 + 32 * 6 + 6
assert MINI_HEAD == 2_278

# downsampling table: (retention, removed, reported train size)
DOWNSAMPLE_ROWS = ((0.5, 19_016, 53_459), (0.3, 26_622, 45_853), (0.1, 34_228, 38_247))
ALL_NEGATIVE_A = 38_031
TRAIN_N = 72_475
REPORTED_TRAIN_N_NO_DOWNSAMPLING = 72_297

# co-occurrence cross-check
JOINT_LVEF_RV = 8_993
COUNT_LVEF = 23_890
COHORT_N = 100_000
P_RV_GIVEN_LVEF_PCT = 37.64
JOINT_PREV_PCT = 8.99

# worked metric values
AUROC_WORKED = ((0.1, 0.4, 0.35, 0.8), (0, 0, 1, 1), 0.75)
AUPRC_WORKED = ((0.9, 0.2), (0, 1), 0.5)
CONFUSION_WORKED = ((0.6, 0.6, 0.4), (1, 0, 0), 0.5, 2.0 / 3.0, 2.0 / 3.0)

# ranking weights
RANK_WEIGHTS = (0.30, 0.40, 0.30)
FEATURE_COUNT = 166
CATEGORY_SIZES = {"timing_variability": 24, "morphology": 96, "spectral": 36, "inter_lead": 10}

# optional full-scale target
FULL_SCALE_B = 9
FULL_SCALE_AUROC = 0.8509
FULL_SCALE_TOL = 0.015
