//! Detection metrics from confusion counts, plus instance-level miss and
//! false-report rates.
//!
//!     cargo run --example metrics -- 527 55 13 121

use camtax::evaluation::{compute_metrics, compute_rates, ConfusionCounts};

fn main() -> camtax::Result<()> {
    let args: Vec<u64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let [tp, fp, fn_, tn] = <[u64; 4]>::try_from(args).unwrap_or([527, 55, 13, 121]);
    let report = compute_metrics(ConfusionCounts::new(tp, fp, fn_, tn))?;
    print!("{report}");

    let (miss, false_reports) = compute_rates(107, 975, 24, 1470)?;
    println!("instance miss rate {miss:.3}, false report rate {false_reports:.3}");
    Ok(())
}
