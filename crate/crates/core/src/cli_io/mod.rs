//! Experiment configuration, CSV ingestion, plots and the stage runner
//! behind the command line.

mod config;
mod ingest;
mod run;
mod svg;

pub use config::{
    with_parameter, CausalSection, DimRef, ExperimentConfig, ForecastSection, InputConfig, LabelSource,
    MagnitudeSection, PartitionConfig, ScanSection, ShiftSpec, ShiftlessRange, SimulationConfig, StabilitySection,
    TestSection,
};
pub use ingest::{ingest_csv, read_trajectory};
pub use run::{load_trajectory, output_dir, run_experiment, OutputRecord, RunManifest, Stage};
pub use svg::{causal_svg, plot_svg, roc_svg, Band, PlotStyle, Series, SeriesBundle};
