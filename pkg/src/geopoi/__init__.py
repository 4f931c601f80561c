"""Geography-aware next-POI recommendation at desk scale."""

from .checkins import (
    CheckIn,
    DatasetSplit,
    Trajectory,
    build_trajectories,
    filter_sparse,
    parse_checkins,
    split_chronological,
)
from .evalrep import EvalReport, cross_city, evaluate, export_report, run_ablations
from .geocode import haversine_km, ngrams, project, quadkey
from .model import PromptSequence, Recommender, RecommenderConfig, build_prompt, train_recommender
from .poiemb import PoiEmbeddingTable, extract_transition_pairs, train_embeddings

__version__ = "0.1.0"
