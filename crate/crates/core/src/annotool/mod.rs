//! Dataset-construction arithmetic: annotator assignment, cross-check consistency,
//! multi-stage label resolution, agreement, quality scores and variant sampling.

mod assign;
mod consistency;
mod kappa;
mod mos;
mod records;
mod sampling;
mod vote;

pub use assign::{assignment_score, form_groups, rank_annotators, AnnotatorProfile, Gender, Group, SCORE_WEIGHTS};
pub use consistency::{
    inter_consistency, inter_consistency_from_tallies, intra_consistency, standard_stage_layout, CheckStage,
    CrossCheckSample, CrossCheckSet, SetTally, MATCH_CREDIT, MISMATCH_CREDIT,
};
pub use kappa::{count_table, fleiss_kappa};
pub use mos::{mos_aggregate, mos_report, MosEntry, MosReport};
pub use records::{cross_check_sets, read_csv, read_jsonl, read_records, AnnotationRecord};
pub use sampling::{
    largest_remainder, sample_variants, DatasetManifest, ManifestRecord, VariantConfig, VariantSplit, CORPUS_COUNTS,
};
pub use vote::{member_majority, resolve_label, Resolution, VoteRecord};
