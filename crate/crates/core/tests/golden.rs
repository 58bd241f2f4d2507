//! Frozen summary of a seeded 10-particle, 3-day run. Regenerate with
//! `UPDATE_GOLDEN=1 cargo test --test golden` after an intentional change.

use std::path::PathBuf;

use seir_kdpf::config::RunConfig;
use seir_kdpf::data::parse_report_reader;
use seir_kdpf::kdpf::{run_filter, FilterConfig, RunOptions};
use seir_kdpf::summary::{read_summary_csv, write_summary_csv};

const REPORTS: &str = "date,cum_cases,cum_deaths\n2014-03-23,49,29\n2014-03-24,59,36\n2014-03-25,70,40\n";

#[test]
fn ten_particle_three_day_summary_matches_golden() {
    let dataset = parse_report_reader(REPORTS.as_bytes()).unwrap();
    let cfg = RunConfig {
        filter: FilterConfig {
            num_particles: 10,
            seed: 42,
            workers: 1,
            ..FilterConfig::default()
        },
        ..RunConfig::default()
    };
    let run = run_filter(&dataset, &cfg.priors, &cfg.link(), &cfg.filter, &RunOptions::default()).unwrap();
    let mut csv = Vec::new();
    write_summary_csv(&run.summary, None, &mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();

    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/summary_10p_3d.csv");
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, &text).unwrap();
    }
    let golden = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text, golden);
    assert_eq!(read_summary_csv(golden.as_bytes()).unwrap(), run.summary);
}
