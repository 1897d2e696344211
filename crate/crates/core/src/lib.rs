//! Sparse vector mechanisms over explicit noise tapes, with executable
//! randomness-alignment checks.
//!
//! The crate models a randomized mechanism as a deterministic function
//! `M(D, H)` of a database side and a [`NoiseTape`] `H`. On top of that it
//! provides:
//!
//! * the classic sparse vector technique, sparse vector with gap, and the
//!   adaptive two-attempt variant ([`mechanism`]);
//! * exact budget splits and the adaptive cost ledger ([`budget`]);
//! * local alignments `H -> H'` that make `D'` reproduce the output of `D`,
//!   and their privacy cost ([`alignment`]);
//! * a verifier that tests alignment soundness and cost bounds on random
//!   trials, enumerates exact output distributions under discrete Laplace
//!   noise, and estimates privacy loss by sampling ([`verify`]).
//!
//! ```
//! use gapsvt::{svt_gap_run, Answer, Branch, Layout, NoiseTape, Side, Workload};
//!
//! let w = Workload::from_values(&[(5.0, 5.0), (3.0, 3.0), (7.0, 7.0)], 4.0, 2, 1.0);
//! let out = svt_gap_run(&w, Side::D, &NoiseTape::zeros(Layout::Single, 3)).unwrap();
//! assert_eq!(out.answers[1], Answer::Bot);
//! assert_eq!(out.answers[2], Answer::TopGap { gap: 3.0, branch: Branch::Plain });
//! ```

pub mod alignment;
pub mod budget;
pub mod error;
pub mod mechanism;
pub mod model;
pub mod noise;
pub mod verify;

pub use alignment::{
    align, align_adaptive, align_svt_gap, alignment_cost, closed_form_cost, index_sets, AlignmentShift, CostWeights,
    IndexSets, Mutation, QueryShift,
};
pub use budget::{budget_split_adaptive, budget_split_svt, AdaptiveBudget, CostLedger, LedgerEvent, SvtBudget};
pub use error::{Error, Result};
pub use mechanism::{adaptive_svt_gap_run, run_sampled, svt_classic_run, svt_gap_run, Budget, Execution, Mechanism};
pub use model::{
    check_workload, Answer, AnswerKey, Branch, Layout, NoiseTape, OutputKey, OutputSequence, QueryNoise, QueryPair,
    Side, Workload,
};
pub use noise::{
    discrete_laplace_pmf, discrete_laplace_tail, laplace_inverse_cdf, sample_tape, NoiseKind, NoiseSampler, NoiseSpec,
    Role,
};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/noise-tapes.md")]
    mod noise_tapes {}
    #[doc = include_str!("../../../book/src/mechanisms.md")]
    mod mechanisms {}
    #[doc = include_str!("../../../book/src/alignments.md")]
    mod alignments {}
    #[doc = include_str!("../../../book/src/verification.md")]
    mod verification {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
