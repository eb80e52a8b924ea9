use std::fmt;

use serde::Serialize;

use super::{evaluate, train_loop, MetricsRow, TrainConfig};
use crate::analyzer::{audit, AuditConfig, Severity};
use crate::archdsl::Preset;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::layers::activation_stats;
use crate::layers::Mode;
use crate::network::Layer;
use crate::rng::CounterRng;

/// Post-ReLU values below this count as near zero.
pub const PROBE_THRESHOLD: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationConfig {
    pub train: TrainConfig,
    /// Runs per arm with seeds `train.seed + 0..seeds`.
    pub seeds: u64,
    /// Largest relative parameter gap allowed between arms of equal budget.
    pub tolerance: f64,
    /// Test images used for the activation probe.
    pub probe_size: usize,
}

impl AblationConfig {
    pub fn new(train: TrainConfig) -> Self {
        Self {
            train,
            seeds: 3,
            tolerance: 0.02,
            probe_size: 256,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeedRun {
    pub seed: u64,
    pub steps: usize,
    pub test_loss: f64,
    pub top1: f64,
    /// Mean over ReLU layers of the fraction of channels that never fire on
    /// the probe batch.
    pub dead_fraction: f64,
    pub near_zero_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ArmReport {
    pub arm: String,
    pub budget: usize,
    pub params: usize,
    pub macs: u64,
    pub audit_fails: usize,
    pub audit_warns: usize,
    pub runs: Vec<SeedRun>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

impl ArmReport {
    pub fn mean_top1(&self) -> f64 {
        mean(self.runs.iter().map(|r| r.top1))
    }

    /// `(min, max)` top-1 over seeds.
    pub fn top1_range(&self) -> (f64, f64) {
        self.runs
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r.top1), hi.max(r.top1)))
    }

    pub fn mean_dead_fraction(&self) -> f64 {
        mean(self.runs.iter().map(|r| r.dead_fraction))
    }

    pub fn mean_near_zero_fraction(&self) -> f64 {
        mean(self.runs.iter().map(|r| r.near_zero_fraction))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationReport {
    pub preset: String,
    pub dataset: String,
    pub train_size: usize,
    pub config: AblationConfig,
    pub arms: Vec<ArmReport>,
}

impl AblationReport {
    pub fn arm(&self, name: &str) -> Option<&ArmReport> {
        self.arms.iter().find(|a| a.arm == name)
    }

    /// One tab-separated line per (arm, seed), with a header.
    pub fn records(&self) -> String {
        let mut out = String::from("preset\tarm\tseed\tparams\tmacs\tsteps\ttest_loss\ttop1\tdead_fraction\tnear_zero_fraction\n");
        for a in &self.arms {
            for r in &a.runs {
                out.push_str(&format!(
                    "{}\t{}\t{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\n",
                    self.preset,
                    a.arm,
                    r.seed,
                    a.params,
                    a.macs,
                    r.steps,
                    r.test_loss,
                    r.top1,
                    r.dead_fraction,
                    r.near_zero_fraction
                ));
            }
        }
        out
    }
}

impl fmt::Display for AblationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "ablation {} on {} ({} training examples, {} seeds from {})",
            self.preset, self.dataset, self.train_size, self.config.seeds, self.config.train.seed
        )?;
        writeln!(
            f,
            "{:<14} {:>10} {:>12} {:>6} {:>18} {:>10} {:>10}  per-seed top1",
            "arm", "params", "MACs", "audit", "top1 mean ±range", "dead", "near-zero"
        )?;
        for a in &self.arms {
            let (lo, hi) = a.top1_range();
            let seeds: Vec<String> = a.runs.iter().map(|r| format!("{:.2}", 100.0 * r.top1)).collect();
            writeln!(
                f,
                "{:<14} {:>10} {:>12} {:>6} {:>10.2}% ±{:<5.2} {:>10.4} {:>10.4}  {}",
                a.arm,
                a.params,
                a.macs,
                format!("{}F/{}W", a.audit_fails, a.audit_warns),
                100.0 * a.mean_top1(),
                50.0 * (hi - lo),
                a.mean_dead_fraction(),
                a.mean_near_zero_fraction(),
                seeds.join(" ")
            )?;
        }
        Ok(())
    }
}

/// Trains every arm of `preset` with one shared configuration and the seeds
/// `cfg.train.seed..+cfg.seeds`, then evaluates on `test`.
///
/// Refuses with [`Error::Isolation`] before training anything if arms of the
/// same budget differ by more than `cfg.tolerance`. `progress` sees every
/// metrics row as `(arm, seed, row)`.
pub fn ablate(
    preset: &Preset,
    train: &Dataset,
    test: &Dataset,
    cfg: &AblationConfig,
    progress: &mut dyn FnMut(&str, u64, &MetricsRow),
) -> Result<AblationReport> {
    cfg.train.validate()?;
    if cfg.seeds == 0 {
        return Err(Error::Argument("ablation needs at least one seed".into()));
    }
    preset.check_isolation(cfg.tolerance)?;
    let mut arms = Vec::with_capacity(preset.arms.len());
    for arm in &preset.arms {
        let ledger = arm.spec.ledger()?;
        let report = audit(&arm.spec, arm.spec.input, &AuditConfig::default());
        let mut runs = Vec::new();
        for seed in cfg.train.seed..cfg.train.seed + cfg.seeds {
            let mut model = arm.spec.build::<f32>(seed)?;
            if model.num_params() != ledger.total_params() {
                return Err(Error::Invariant(format!(
                    "arm `{}` builds {} parameters, ledger says {}",
                    arm.name,
                    model.num_params(),
                    ledger.total_params()
                )));
            }
            let run_cfg = TrainConfig { seed, ..cfg.train.clone() };
            let summary = train_loop(&mut model, train, None, &run_cfg, &mut |row| {
                progress(&arm.name, seed, row);
                Ok(())
            })
            .map_err(|e| e.in_layer(&format!("{}/{} seed {seed}", preset.name, arm.name)))?;
            let (test_loss, top1) = evaluate(&mut model, test, cfg.train.eval_batch_size)?;

            // Sparsity probe on a fixed slice of the test set.
            let probe = test.subset(cfg.probe_size.max(1))?;
            model.set_mode(Mode::Eval);
            let (mut dead, mut near, mut relus) = (0.0, 0.0, 0usize);
            model.forward_inspect(&probe.images, &CounterRng::new(0), |_, node, y| {
                if matches!(node.layer, Layer::Relu) {
                    let s = activation_stats(y, PROBE_THRESHOLD);
                    dead += s.dead_fraction;
                    near += s.near_zero_fraction;
                    relus += 1;
                }
            })?;
            let relus = relus.max(1) as f64;
            runs.push(SeedRun {
                seed,
                steps: summary.steps,
                test_loss,
                top1,
                dead_fraction: dead / relus,
                near_zero_fraction: near / relus,
            });
        }
        arms.push(ArmReport {
            arm: arm.name.clone(),
            budget: arm.budget,
            params: ledger.total_params(),
            macs: ledger.total_macs(),
            audit_fails: report.count(Severity::Fail),
            audit_warns: report.count(Severity::Warn),
            runs,
        });
    }
    Ok(AblationReport {
        preset: preset.name.clone(),
        dataset: train.meta.name.clone(),
        train_size: train.len(),
        config: cfg.clone(),
        arms,
    })
}
