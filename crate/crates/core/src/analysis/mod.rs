//! Measurements: copy accuracy, per-head induction scores, grokking detection.

mod copy_acc;
mod grok;
mod heads;

pub use copy_acc::{copies_gold, eval_copy_accuracy, CopyAccuracy};
pub use grok::{detect_grokking, GrokParams, GrokReport};
pub use heads::{
    a_bar_from_attention, attention_induction_score, full_ov_circuit, induction_score_table,
    ov_eigenvalue_positivity, prev_token_from_attention, prev_token_score, reduced_ov_circuit,
    write_head_csv, EpOptions, HeadScore, HeadScoreTable, HEAD_CSV_HEADER,
};
