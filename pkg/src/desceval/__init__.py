"""Quality metrics for text-based visual descriptor sets: mutual-kNN
alignment against a reference image space, similarity statistics against a
sampled pre-training corpus, zero-shot classification by description, and
the descriptor-set generators the evaluation compares."""

__version__ = "0.1.0"

from .alignment import (  # noqa: F401
    AlignmentConfig,
    AlignmentResult,
    GlobalPool,
    choose_k,
    dino_align,
    global_pool,
    mutual_knn_alignment,
    semantic_projection,
    strip_class_names,
)
from .classify import (  # noqa: F401
    CheckpointInput,
    IterationRecord,
    accuracy_for_set,
    class_scores,
    track_iterations,
    zero_shot_accuracy,
)
from .errors import (  # noqa: F401
    BadMagicError,
    ConfigError,
    DataError,
    DescevalError,
    DescriptorFormatError,
    MatrixSizeError,
    MetricUndefinedError,
    ShapeMismatchError,
    TruncatedFileError,
    UnsupportedDtypeError,
    ZeroNormRowError,
)
from .generators import (  # noqa: F401
    GeneratorConfig,
    SplitMix64,
    class_name_prompts,
    dclip_randomized,
    waffle_randomized,
)
from .knn import NeighborList, cosine_similarity, knn_sets, top_k  # noqa: F401
from .pretrain import (  # noqa: F401
    ClipSimConfig,
    ClipSimResult,
    DescriptorStats,
    FrequencyProfile,
    clip_sim,
    descriptor_similarity,
    frequency_similarity_profile,
    mean_similarity,
    retrieve_matches,
)
from .store import (  # noqa: F401
    CaptionCorpus,
    DescriptorSet,
    EmbeddingMatrix,
    LabelVector,
    l2_normalize_rows,
    load_descriptor_set,
    load_labels,
    open_corpus,
    open_embedding_matrix,
    read_embedding_matrix,
    save_descriptor_set,
    write_embedding_matrix,
)
