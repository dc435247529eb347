//! Runs the standard synthetic corpus through a handful of adapter conditions.
//!
//! cargo run --release -p gapkit --example transfer_demo -- [seeds]

use gapkit::analysis::{self, ShiftCondition};
use gapkit::geometry;
use gapkit::transferlab::{self, Condition, SyntheticCorpusSpec, TrainConfig};

fn main() -> gapkit::Result<()> {
    let n_seeds: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(5);
    let corpus = transferlab::generate_synthetic_corpus(&SyntheticCorpusSpec::standard())?;
    let gap = geometry::gap_stats(&corpus, geometry::DEFAULT_UNPAIRED_SAMPLES, 0)?;
    println!(
        "paired cos {:.4}  unpaired cos {:.4}  gap norm {:.6}",
        gap.mean_paired_cos, gap.mean_unpaired_cos, gap.gap_norm
    );
    let conditions: Vec<Condition> = [
        "none",
        "noise:0.08",
        "mean+noise:0.08",
        "neg_mean+noise:0.08",
        "cov",
        "linear+noise:0.08",
    ]
    .iter()
    .map(|c| Condition::parse(c))
    .collect::<Result<_, _>>()?;
    let seeds: Vec<u64> = (1..=n_seeds).collect();
    let hyper = TrainConfig::default();
    let report = transferlab::cross_modal_experiment(&corpus, &conditions, &hyper, &seeds)?;
    print!("{}", report.to_table());

    let sweep = analysis::sensitivity_sweep(
        &corpus,
        &[
            ShiftCondition::None,
            ShiftCondition::Rng { magnitude: 0.5 },
            ShiftCondition::Mean,
            ShiftCondition::NegMean,
        ],
        0.08,
        n_seeds as usize,
        0,
        &hyper,
    )?;
    print!("{}", analysis::sensitivity_table(&sweep));
    Ok(())
}
