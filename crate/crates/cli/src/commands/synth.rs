use loadclust::ingest::{write_readings, LoadSeries};
use loadclust::synth::{generate, write_truth_csv, Process};
use serde::Serialize;

use super::open_out;
use crate::config::PipelineConfig;
use crate::Failure;

pub const SYNTH_FILE: &str = "synthetic.csv";
pub const TRUTH_FILE: &str = "truth.csv";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthSummary {
    pub config_hash: String,
    pub series: usize,
    pub days: usize,
    pub seed: u64,
    pub processes: Vec<Process>,
    pub class_sizes: Vec<usize>,
    pub degenerate: Vec<String>,
}

/// Writes the population as readings (`acorn_group` carries the process
/// name) plus the ground truth, and points the kept config at the readings.
pub fn run(cfg: &PipelineConfig) -> Result<(), Failure> {
    let synth = cfg.synth();
    let population = generate(&synth)?;
    let mut cfg = cfg.clone();
    let dir = super::out_path(&cfg)?.to_path_buf();
    cfg.input = Some(dir.join(SYNTH_FILE));

    let mut out = open_out(&cfg, "synth")?;
    let loads: Vec<LoadSeries> = population.iter().map(|s| s.load.clone()).collect();
    out.write_with(SYNTH_FILE, |w| Ok(write_readings(&loads, w)?))?;
    drop(loads);
    out.write_with(TRUTH_FILE, |w| Ok(write_truth_csv(&synth, &population, w)?))?;

    let mut class_sizes = vec![0; synth.processes.len()];
    for s in &population {
        class_sizes[s.class] += 1;
    }
    let summary = SynthSummary {
        config_hash: out.config_hash().to_string(),
        series: synth.series,
        days: synth.days,
        seed: synth.seed,
        processes: synth.processes.clone(),
        class_sizes,
        degenerate: population.iter().filter(|s| s.degenerate).map(|s| s.load.meter_id.clone()).collect(),
    };
    out.write_json("synth.json", &summary)?;
    out.finish()?;
    Ok(())
}
