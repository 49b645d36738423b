//! A reduced theta sweep written as CSV to stdout.
use gravalign::harness::benchmark::{grid, write_benchmark, Scenario};
use gravalign::harness::{BaseSource, ScenarioSpec};

fn main() -> gravalign::Result<()> {
    let template = ScenarioSpec {
        base: BaseSource::Generated { points: 1500 },
        repetitions: 2,
        seed: 7,
        ..ScenarioSpec::default()
    };
    let cells = grid(Scenario::Theta, &template);
    write_benchmark(&cells, std::io::stdout().lock())?;
    Ok(())
}
