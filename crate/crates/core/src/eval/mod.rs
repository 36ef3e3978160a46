//! Attack success rates, the context-free and contextual bounds, the
//! enumeration oracles, and experiment sweeps.

mod asr;
mod joint;
mod oracle;
mod stats;
mod sweep;

pub use asr::{
    attack_dataset, compute_asr, context_free_bound, contextual_k_bound, reconstruct_dataset, score_dataset, AsrCount,
    AsrReport, Attack,
};
pub use joint::{conditional_entropies, JointDistribution};
pub use oracle::{
    context_free_strategy, contextual_strategy, enumerate_best_strategy, expand, expected_accuracy,
    expected_context_free_asr, expected_contextual_asr, run_oracle, OracleSummary, OracleTrial, OPTIMALITY_TOLERANCE,
    SEARCH_LIMIT,
};
pub use stats::{binomial_sigma, spearman};
pub use sweep::{
    run_sweep, split_corpus, take_shadow, train_scorer, write_report_csv, write_report_json, AttackMethod, ScorerKind,
    ScorerOptions, ShadowSource, SweepReport, SweepSpec, DETECTOR_EPOCHS, DETECTOR_LEARNING_RATE,
};
