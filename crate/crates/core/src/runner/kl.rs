use serde::{Deserialize, Serialize};

use super::config::KlLabConfig;
use super::RunError;
use crate::kl_lab::{BimodalDemo, Direction, FitReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedFits {
    pub seed: u64,
    pub forward: FitReport,
    pub reverse: FitReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlLabReport {
    pub demo: BimodalDemo,
    pub fits: Vec<SeedFits>,
}

pub fn kl_demo(cfg: &KlLabConfig) -> BimodalDemo {
    let mut demo = BimodalDemo {
        steps: cfg.steps,
        lr: cfg.learning_rate,
        ..BimodalDemo::default()
    };
    demo.family.max_width = cfg.max_width;
    demo
}

/// Forward and reverse fits of the bimodal demo for every seed.
pub fn run_kl_lab(cfg: &KlLabConfig) -> Result<KlLabReport, RunError> {
    let demo = kl_demo(cfg);
    let fits = cfg
        .seeds
        .iter()
        .map(|&seed| {
            Ok(SeedFits {
                seed,
                forward: demo.fit(Direction::Forward, seed, cfg.trace_every)?,
                reverse: demo.fit(Direction::Reverse, seed, cfg.trace_every)?,
            })
        })
        .collect::<Result<Vec<_>, RunError>>()?;
    Ok(KlLabReport { demo, fits })
}

impl KlLabReport {
    /// Long-format optimization traces: one row per (seed, direction, step).
    pub fn traces_csv(&self) -> String {
        let mut out = String::from("seed,direction,step,divergence,location,width\n");
        for f in &self.fits {
            for (name, rep) in [("forward", &f.forward), ("reverse", &f.reverse)] {
                for t in &rep.trace {
                    out.push_str(&format!(
                        "{},{},{},{:?},{:?},{:?}\n",
                        f.seed, name, t.step, t.divergence, t.location, t.width
                    ));
                }
            }
        }
        out
    }

    /// One row per seed with the fitted mass in each mode region.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("seed,direction,location,width,divergence,mass_left,mass_right\n");
        for f in &self.fits {
            for (name, rep) in [("forward", &f.forward), ("reverse", &f.reverse)] {
                let m = |i: usize| rep.region_mass.get(i).copied().unwrap_or(0.0);
                out.push_str(&format!(
                    "{},{},{:?},{:?},{:?},{:?},{:?}\n",
                    f.seed, name, rep.location, rep.width, rep.divergence, m(0), m(1)
                ));
            }
        }
        out
    }
}
