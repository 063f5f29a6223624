//! Multi-iteration experiments driven by a declarative manifest.

mod manifest;
mod phi_sweep;
mod report;
mod run;
mod state;

pub use manifest::{
    classifier_id, generator_id, ChainManifest, CorpusSource, DataSection, Designation,
    EvalSection, PoolSection, MANIFEST_FORMAT,
};
pub use phi_sweep::{run_phi_sweep, DEFAULT_PHIS};
pub use report::{
    cross_report, curve_report, emit_report, sequential_report, InLossEntry, ReportKind,
    SequentialReport, REPORT_DIR,
};
pub use run::{
    open_chain, resume, run_chain, run_chain_with, run_iteration, ChainContext, RunOptions,
    WORKERS_ENV,
};
pub use state::{
    ChainState, ClassifierRecord, IterationRecord, PhiSweepRecord, PhiSweepRow, StageStatus,
    MANIFEST_COPY, STATE_FILE, STATE_FORMAT,
};
