//! Extended Kalman filtering and residue generation.

pub mod filter;
pub mod lemma;
pub mod residue;
pub mod uav;

pub use filter::{Dynamics, EkfState, Innovation, Observation};
pub use lemma::{check_lemma_conditions, LemmaBounds, LemmaLog, LemmaReport};
pub use residue::{
    generate_residues, read_residue_csv, run_filter, write_residue_csv, EkfRun, ResidueMeta,
    ResidueRecord, ResidueSequence, RunOptions, Source,
};
pub use uav::{clone_keyframe, FilterConfig, GpsObservation, UavDynamics, VoObservation};
