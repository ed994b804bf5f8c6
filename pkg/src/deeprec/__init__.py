"""Environment engine for autonomous multi-turn reasoning-retrieval
recommendation: protocol parsing, preference-aware top-k retrieval,
hierarchical rewards, rollouts, evaluation, and an HTTP session service."""

from .corpus import (
    Catalog,
    InteractionSequence,
    ItemRecord,
    SplitSample,
    ingest_interactions,
    load_catalog,
    select_by_difficulty,
    split_leave_one_out,
)
from .errors import (
    CatalogError,
    ConfigError,
    DeepRecError,
    EmbeddingFileError,
    PolicyTransportError,
    RetrievalError,
    SessionError,
)
from .evaluation import (
    MetricReport,
    compare_modes,
    evaluate_retriever,
    evaluate_trajectories,
)
from .protocol import (
    FormatReport,
    ParseEvent,
    StreamParser,
    Trajectory,
    Turn,
    inject_item_list,
    normalize_title,
    parse_trajectory,
    render_system_prompt,
)
from .retrieval import (
    EmbeddingMatrix,
    HashedTextProvider,
    PreferenceVector,
    RetrievalConfig,
    RetrievalIndex,
    build_index,
    read_embedding_file,
    write_embedding_file,
)
from .rewards import (
    RewardBreakdown,
    RewardConfig,
    reward_diversity,
    reward_format,
    reward_hit,
    reward_invocation,
    reward_point,
    reward_rank,
    score_trajectory,
)
from .rollout import (
    Episode,
    EpisodeResult,
    OraclePolicy,
    RandomPolicy,
    RemotePolicy,
    RolloutConfig,
    TemplatePolicy,
    make_policy,
    run_batch,
    run_episode,
)

__version__ = "0.1.0"
