from .build import build_dataset, category_matches_path, mix_training, qualified_image, rcvit_records, scan_ua_c2v
from .corpus import Dataset, Quadruple, corpus_stats, count_citations
from .generation import (
    EmptyFactsError,
    assign_profiles,
    build_unanswerable_c2v,
    contextual_expression,
    dedupe_expressions,
    drop_invalid_markers,
    extract_facts,
    filter_qa,
    generate_profiles,
    generate_qa,
    generate_rcid,
    pair_category,
    substitute,
)
from .rcvit import FormatError, ParsedPrompt, format_rcvit, parse_rcvit
from .types import (
    REF,
    CandidateQA,
    PipelineConfig,
    Profile,
    RcvitRecord,
    ReferringExpression,
    SourceObject,
    SourceRecord,
    StructuredFacts,
)

__all__ = [
    "REF", "CandidateQA", "Dataset", "EmptyFactsError", "FormatError", "ParsedPrompt", "PipelineConfig",
    "Profile", "Quadruple", "RcvitRecord", "ReferringExpression", "SourceObject", "SourceRecord",
    "StructuredFacts", "assign_profiles", "build_dataset", "build_unanswerable_c2v", "category_matches_path",
    "contextual_expression", "corpus_stats", "count_citations", "dedupe_expressions", "drop_invalid_markers",
    "extract_facts", "filter_qa", "format_rcvit", "generate_profiles", "generate_qa", "generate_rcid",
    "mix_training", "pair_category", "parse_rcvit", "qualified_image", "rcvit_records", "scan_ua_c2v",
    "substitute",
]
