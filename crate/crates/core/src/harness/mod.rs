//! Synthetic instances, file formats, experiment grids and process setup.

pub mod benchmark;
pub mod instance;
pub mod io;

pub use benchmark::{grid, run_benchmark, write_benchmark, Cell, Row, Scenario};
pub use instance::{generate_base_cloud, make_instance, BaseSource, Bookkeeping, Instance, ScenarioSpec};
pub use io::{load_cloud, load_priors, save_result};

/// Environment variable capping worker threads; 0 or unset means one per core.
pub const THREADS_ENV: &str = "MBGA_THREADS";

/// Thread count requested through [`THREADS_ENV`], if any.
pub fn threads_from_env() -> crate::Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(0) => Ok(None),
            Ok(n) => Ok(Some(n)),
            Err(_) => Err(crate::Error::InvalidParameter {
                name: "MBGA_THREADS",
                reason: format!("expected a thread count, got `{v}`"),
            }),
        },
    }
}

/// Size the global worker pool from [`THREADS_ENV`]. Call once, before any
/// parallel work.
pub fn configure_threads() -> crate::Result<usize> {
    if let Some(n) = threads_from_env()? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| crate::Error::InvalidParameter {
                name: "MBGA_THREADS",
                reason: e.to_string(),
            })?;
    }
    Ok(rayon::current_num_threads())
}
