//! Experiment grid over UAV models, noise families, attacks and seeds.

pub mod config;
pub mod data;
pub mod grid;
pub mod plots;
pub mod reference;
pub mod study;

pub use config::{Durations, ExperimentConfig};
pub use data::{cell_data, make_split, scenario, CellData, CellKey, ResidueSet, Split};
pub use grid::{
    dominance, grid_keys, run_cell, run_grid, summarize, write_cell_artifacts, CellArtifacts,
    CellResult, CellStatus, Dominance, GridReport, SummaryRow, QUADFORMER, QUADFORMER_TCD,
};
pub use plots::{emit_plots, PlotOutcome};
pub use reference::{reference, ReferencePrf};
pub use study::{fusion_study, rmse_over, FusionStudy, FusionSummary};
