"""Dense video event captioning on pre-extracted segment features.

The pipeline: sliding-window proposal generation from clustered event-length
proportions, a learned proposal ranker, an ensemble of recurrent caption
decoders fine-tuned with self-critical policy gradients, score re-ranking,
and a full n-gram evaluation stack. A synthetic corpus generator makes every
stage trainable at desk scale.
"""

from .timeline import Interval, SegmentSpan, VideoMeta, interval_to_segments, segments_to_interval, tiou
from .features import (
    ContextSequence,
    DatasetManifest,
    Event,
    FeatureSequence,
    ManifestEntry,
    context_summary,
    mean_pool,
    read_features,
    read_manifest,
    write_features,
    write_manifest,
)
from .proposals import (
    CandidateProposal,
    Label,
    WindowBank,
    cluster_proportions,
    generate_candidates,
    label_candidates,
)
from .ranker import (
    RankerModel,
    RankerTrainConfig,
    RankingFeatures,
    ScoredProposal,
    assemble_features,
    ranker_forward,
    score_and_filter,
    train_ranker,
)
from .vocab import Vocabulary, build_vocab, tokenize
from .decoder import (
    CaptionHypothesis,
    DecoderModel,
    SpanContext,
    TopicPredictor,
    beam_search,
    decode_step,
    ensemble_step,
    greedy_decode,
    make_span_context,
)
from .caption_training import (
    ScstConfig,
    TopicTrainConfig,
    XeConfig,
    scst_update,
    train_topic_predictor,
    train_xe,
)
from .metrics import (
    EvalReport,
    NGramStats,
    bleu4,
    cider,
    dense_caption_eval,
    meteor_lite,
    proposal_pr,
)
from .rerank import RankedEvent, rerank
from .synth import SynthConfig, TopicGrammar, generate

__version__ = "0.1.0"
