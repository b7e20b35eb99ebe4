//! Real-time design assembly from a vintage panel.
//!
//! Builds the synthetic panel, assembles the nowcast and one-step designs at
//! one origin and prints which months each predictor block comes from.

use tailcast::ingest::{assemble_design, DesignOptions, PredictorMode};
use tailcast::synth::{generate, SynthConfig, SYNTH_TARGET};
use tailcast::YearMonth;

fn main() -> tailcast::Result<()> {
    let data = generate(&SynthConfig::default())?;
    let origin = YearMonth::new(2013, 6).expect("valid month");
    let opts = DesignOptions { n_lags: 2, ..Default::default() };
    for h in [0, 1] {
        let d = assemble_design(&data.panel, None, SYNTH_TARGET, origin, h, PredictorMode::Fred, &opts)?;
        println!("origin {origin}, h = {h}: {} rows x {} predictors", d.n_obs(), d.n_predictors());
        println!("  estimation rows {} .. {}", d.row_dates()[0], d.row_dates()[d.n_obs() - 1]);
        for (c, month) in d.columns().iter().zip(d.x_new_dates()) {
            println!("  {:<14} {:?}, forecast row reads {month}", c.name, c.provenance);
        }
        if !d.dropped().is_empty() {
            println!("  dropped constant columns: {:?}", d.dropped());
        }
    }
    Ok(())
}
