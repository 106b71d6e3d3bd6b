//! Scenario description, data generation and the replication runner.

mod dgp;
mod scenario;
mod study;

pub use dgp::{
    arma_mixture_errors, garch_factors, garch_series, generate_panel, make_alpha, sample_loadings,
    toeplitz_error_cov, ArmaProcess, GeneratedPanel, PopulationOracle, ToeplitzFactor,
};
pub use scenario::{
    builtin, AlphaLayout, ArmaComponent, GarchParams, HeteroVariances, SimulationScenario, TemporalMode,
};
pub use study::{
    replication_rng, run_study, write_records, write_reports, MetricsReport, ReplicationRecord, StudyConfig,
    StudyOutcome,
};
