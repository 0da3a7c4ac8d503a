"""Feature generation with the least-squares normal transform.

The toolkit extracts unsupervised raw features from images (Saab cascade,
HOG), generates supervised complementary features via least-squares
regression onto super-class bipartition targets, ranks features by their
discriminant power, and classifies with gradient-boosted trees in baseline,
one-round, or confidence-routed two-round systems.
"""

from .dataio import Dataset, LabeledImage, load_cifar10, load_idx, rgb_to_yuv, save_idx
from .dft import DftScore, RankedFeatures, dft_loss, rank_features, select_top
from .errors import (
    ConfigError,
    ConsistencyError,
    DegenerateModelError,
    FormatError,
    InvalidInputError,
    LntkitError,
    SingularityError,
)
from .gbt import (
    BoostedModel,
    GbtConfig,
    classifier_flops,
    classifier_param_count,
    confidence,
    confidence_scores,
    fit_gbt,
    predict_labels,
    predict_proba,
)
from .lnt import (
    ComplementaryFeatures,
    LntModel,
    LowRankFactors,
    apply_lnt,
    feature_gen_flops,
    feature_gen_param_count,
    fit_lnt,
    svd_low_rank,
)
from .pipeline import (
    PipelineConfig,
    PreparedData,
    RunOutput,
    RunReport,
    emit_report,
    run_baseline,
    run_one_round,
    run_system,
    run_two_round,
)
from .rawfeat import (
    FeatureMatrix,
    HopConfig,
    HopSpec,
    SaabKernel,
    SaabModel,
    abs_max_pool,
    apply_saab,
    concat_features,
    fit_saab,
    hog_features,
)
from .splits import SplitScheme, SplitSet, TargetMatrix, build_targets, enumerate_splits, split_count

__version__ = "0.1.0"
