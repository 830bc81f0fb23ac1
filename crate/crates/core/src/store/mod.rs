//! File-backed persistence and the end-to-end case study.

mod bundle;
mod case_study;
mod workspace;

use std::path::PathBuf;

use thiserror::Error;

use crate::attestation::AttestationError;
use crate::codec::CodecError;

pub use bundle::{required_files, stage_of, verify_bundle, AuditBundle, Divergence, RunManifest, VerifyReport};
pub use case_study::{
    collect, execute, run_case_study, CaseInputs, CaseOutputs, CaseStudy, CaseStudyResult, SimOutputs, GRANTS_POLICY,
};
pub use workspace::{JournalEntry, ManifestEntry, Workspace, WorkspaceManifest, WORKSPACE_FORMAT};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("bundle is missing {}", .0.join(", "))]
    IncompleteBundle(Vec<String>),
    #[error("{stage}: {message}")]
    Stage { stage: &'static str, message: String },
    #[error("workspace: {0}")]
    Workspace(String),
    #[error("{0} does not match its manifest digest")]
    DigestMismatch(String),
    #[error("workspace is locked by {}", .0.display())]
    Locked(PathBuf),
    #[error(transparent)]
    Attestation(#[from] AttestationError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
