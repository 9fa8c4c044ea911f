"""vidpref: a desk-scale video preference-optimization sandbox.

Builds a synthetic video world with exact reward oracles, scores a
repository of model samples and static reference videos on identity,
dynamics, and prompt following, selects preference pairs via Pareto
dominance, and fine-tunes a toy diffusion denoiser with a pairwise
preference loss against a frozen reference model.
"""

from .diffusion import (
    Conditioning,
    DenoiserParams,
    NoiseSchedule,
    forward_diffuse,
    load_checkpoint,
    make_schedule,
    predict_noise,
    sample_video,
    save_checkpoint,
    train_initial,
)
from .errors import (
    ConfigurationError,
    DataError,
    NumericError,
    ParseError,
    StateError,
    VidprefError,
)
from .hpo import HpoConfig, PairBatch, hpo_gradient_step, hpo_pair_loss, train_hpo
from .repository import (
    Repository,
    RepositoryManifest,
    Source,
    VideoRecord,
    build_repository,
    load_repository,
    save_repository,
)
from .rewards import (
    RawScores,
    RewardVector,
    ScorerSet,
    default_scorers,
    normalize_repository,
    score_dynamic,
    score_identity,
    score_semantic,
)
from .selection import (
    PreferencePair,
    SelectionConfig,
    Stage,
    dominates,
    merge_pairs,
    partition_fronts,
    select_dynamic_pairs,
    select_id_pairs,
)
from .world import (
    IdentitySpec,
    MotionSpec,
    PromptSpec,
    World,
    WorldConfig,
    inflate_reference,
    make_world,
    oracle_scores,
    render_video,
)

__version__ = "0.1.0"
