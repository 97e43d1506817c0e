from .matrix import (
    ADM_COLUMNS,
    CANONICAL_COLUMNS,
    FEATURE_GROUPS,
    FULL_SELECTION,
    VIF_COLUMNS,
    FeatureError,
    FeatureMatrix,
    FeatureScaler,
    NormalizationStats,
    apply_normalization,
    build_feature_matrix,
    fit_normalization,
    ingest_external_features,
    parse_selection,
)
from .quality import ms_ssim, psnr, ssim, vif_scales
from .temporal import freeze_feature, frame_differences, motion_features, skip_feature
