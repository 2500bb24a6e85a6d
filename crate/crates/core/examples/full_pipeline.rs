//! Run the whole synthetic workflow with default settings and print the
//! pooled verification scores of every model.

use std::time::Instant;

use windcal::ensemble_data::{synthetic_generate, SyntheticConfig};
use windcal::pipeline::{forecast_rows, overall_table, train, verify, TrainOptions};
use windcal::scoring::{IntervalSpec, ReportOptions};
use windcal::store::ModelKind;

fn main() -> windcal::Result<()> {
    let start = Instant::now();
    let data = synthetic_generate(&SyntheticConfig::default())?;
    let mut tables = Vec::new();
    for model in ModelKind::ALL {
        let t = Instant::now();
        let out = train(&data, &TrainOptions::new(model))?;
        let rows = forecast_rows(&out.forecasts, IntervalSpec::default())?;
        println!("{model}: {} windows, {} forecasts in {:.1?}", out.store.len(), rows.len(), t.elapsed());
        tables.push((model.to_string(), rows));
    }
    let reports = verify(&tables, &data, &ReportOptions::default())?;
    for r in overall_table(&reports) {
        println!(
            "{:10} crps {:.4} crpss {:+.4} mae {:.4} rmse {:.4} coverage {:.4} end-bin excess {:.3}",
            r.model,
            r.mean_crps,
            r.crpss.unwrap_or(f64::NAN),
            r.mae,
            r.rmse,
            r.coverage,
            r.end_bin_excess.unwrap_or(f64::NAN)
        );
    }
    println!("total {:.1?}", start.elapsed());
    Ok(())
}
