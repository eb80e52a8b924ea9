//! Named architectures shipped as `.arch` files under `configs/`.
//!
//! Each file starts with a `# budget N` comment giving the parameter count
//! its widths were solved for. Arms of a preset that share a budget form an
//! equal-budget group and must stay within tolerance of each other.

use super::{parse, ArchSpec};
use crate::error::{Error, Result};
use crate::tensor::ImageShape;

macro_rules! arch {
    ($file:literal) => {
        include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/configs/", $file, ".arch"))
    };
}

struct Source {
    name: &'static str,
    description: &'static str,
    arms: &'static [(&'static str, &'static str)],
}

pub const SIMPNET_PRESETS: [&str; 4] = ["simpnet-tiny", "simpnet-300k", "simpnet-600k", "simpnet-5m"];

const SIMPNET_SOURCES: &[Source] = &[
    Source {
        name: "simpnet-tiny",
        description: "13-conv SimpNet scaled to ~100K parameters for MNIST",
        arms: &[("simpnet-tiny", arch!("simpnet-tiny"))],
    },
    Source {
        name: "simpnet-300k",
        description: "13-conv SimpNet at 300K parameters",
        arms: &[("simpnet-300k", arch!("simpnet-300k"))],
    },
    Source {
        name: "simpnet-600k",
        description: "13-conv SimpNet at 600K parameters",
        arms: &[("simpnet-600k", arch!("simpnet-600k"))],
    },
    Source {
        name: "simpnet-5m",
        description: "13-conv SimpNet at 5.48M parameters",
        arms: &[("simpnet-5m", arch!("simpnet-5m"))],
    },
];

const ABLATION_SOURCES: &[Source] = &[
    Source {
        name: "arch1-depth",
        description: "depth 8/9/10/13 at a fixed 300K budget",
        arms: &[
            ("d8", arch!("arch1-depth.d8")),
            ("d9", arch!("arch1-depth.d9")),
            ("d10", arch!("arch1-depth.d10")),
            ("d13", arch!("arch1-depth.d13")),
        ],
    },
    Source {
        name: "shallow-vs-deep",
        description: "6-layer 1.1M network against a 13-layer 570K network",
        arms: &[
            ("shallow", arch!("shallow-vs-deep.shallow")),
            ("deep", arch!("shallow-vs-deep.deep")),
        ],
    },
    Source {
        name: "balanced-vs-wide-end-8m",
        description: "gradual widths against a wide final layer at 8M",
        arms: &[
            ("balanced", arch!("balanced-vs-wide-end-8m.balanced")),
            ("wide-end", arch!("balanced-vs-wide-end-8m.wide-end")),
        ],
    },
    Source {
        name: "balanced-vs-wide-end-128k",
        description: "gradual widths against a wide final layer at 128K",
        arms: &[
            ("balanced", arch!("balanced-vs-wide-end-128k.balanced")),
            ("wide-end", arch!("balanced-vs-wide-end-128k.wide-end")),
        ],
    },
    Source {
        name: "pool-placement",
        description: "single pooling layer after conv 3, 5 or 7 at 53K",
        arms: &[
            ("l3", arch!("pool-placement.l3")),
            ("l5", arch!("pool-placement.l5")),
            ("l7", arch!("pool-placement.l7")),
        ],
    },
    Source {
        name: "kernel-size",
        description: "3x3, 5x5 and 7x7 kernels at 300K and 1.6M",
        arms: &[
            ("k3-300k", arch!("kernel-size.k3-300k")),
            ("k3-1.6m", arch!("kernel-size.k3-1.6m")),
            ("k5-1.6m", arch!("kernel-size.k5-1.6m")),
            ("k7-300k-v1", arch!("kernel-size.k7-300k-v1")),
            ("k7-300k-v2", arch!("kernel-size.k7-300k-v2")),
            ("k7-1.6m", arch!("kernel-size.k7-1.6m")),
        ],
    },
    Source {
        name: "maxpool-vs-sconv",
        description: "SimpNet with max-pooling against stride-2 convolutions at 360K",
        arms: &[
            ("maxpool", arch!("maxpool-vs-sconv.maxpool")),
            ("sconv", arch!("maxpool-vs-sconv.sconv")),
        ],
    },
    Source {
        name: "saf-vs-plain",
        description: "SimpNet with SAF-pooling against plain max-pooling at 300K",
        arms: &[("saf", arch!("saf-vs-plain.saf")), ("maxpool", arch!("saf-vs-plain.maxpool"))],
    },
];

#[derive(Clone, Debug, PartialEq)]
pub struct Arm {
    pub name: String,
    pub spec: ArchSpec,
    /// Parameter count the widths were solved for.
    pub budget: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Preset {
    pub name: String,
    pub description: String,
    pub arms: Vec<Arm>,
}

fn budget_of(text: &str) -> Option<usize> {
    text.lines().next()?.strip_prefix("# budget ")?.trim().parse().ok()
}

fn load(src: &Source) -> Preset {
    let arms = src
        .arms
        .iter()
        .map(|(arm, text)| Arm {
            name: arm.to_string(),
            // Shipped files are checked by the test suite.
            spec: parse(text).unwrap_or_else(|e| panic!("bundled preset {}/{arm}: {e}", src.name)),
            budget: budget_of(text).unwrap_or_else(|| panic!("bundled preset {}/{arm} lacks a budget line", src.name)),
        })
        .collect();
    Preset {
        name: src.name.to_string(),
        description: src.description.to_string(),
        arms,
    }
}

impl Preset {
    /// Arms grouped by declared budget, in first-appearance order.
    pub fn budget_groups(&self) -> Vec<(usize, Vec<&Arm>)> {
        let mut groups: Vec<(usize, Vec<&Arm>)> = Vec::new();
        for arm in &self.arms {
            match groups.iter_mut().find(|(b, _)| *b == arm.budget) {
                Some((_, v)) => v.push(arm),
                None => groups.push((arm.budget, vec![arm])),
            }
        }
        groups
    }

    /// Refuses when arms meant to be compared at equal budget differ in
    /// parameter count by more than `tolerance` (relative to the larger).
    pub fn check_isolation(&self, tolerance: f64) -> Result<()> {
        for (budget, arms) in self.budget_groups() {
            let counts = arms
                .iter()
                .map(|a| Ok((a.name.as_str(), a.spec.param_count()?)))
                .collect::<Result<Vec<_>>>()?;
            let (min_arm, min) = counts.iter().min_by_key(|c| c.1).copied().unwrap_or(("", 0));
            let (max_arm, max) = counts.iter().max_by_key(|c| c.1).copied().unwrap_or(("", 0));
            if max > 0 && (max - min) as f64 / max as f64 > tolerance {
                return Err(Error::Isolation(format!(
                    "preset `{}`, {budget}-parameter group: `{max_arm}` has {max}, `{min_arm}` has {min} \
                     (differ by more than {:.1}%)",
                    self.name,
                    tolerance * 100.0
                )));
            }
        }
        Ok(())
    }

    pub fn with_input(mut self, input: ImageShape) -> Self {
        for arm in &mut self.arms {
            arm.spec.input = input;
        }
        self
    }

    pub fn with_num_classes(mut self, k: usize) -> Result<Self> {
        for arm in &mut self.arms {
            arm.spec = arm.spec.clone().with_num_classes(k)?;
        }
        Ok(self)
    }

    pub fn arm(&self, name: &str) -> Option<&Arm> {
        self.arms.iter().find(|a| a.name == name)
    }
}

/// The multi-arm experiments.
pub fn ablation_presets() -> Vec<Preset> {
    ABLATION_SOURCES.iter().map(load).collect()
}

/// Every preset name, SimpNet shortcuts first.
pub fn preset_names() -> Vec<&'static str> {
    SIMPNET_SOURCES.iter().chain(ABLATION_SOURCES).map(|s| s.name).collect()
}

fn unknown(name: &str) -> Error {
    Error::UnknownPreset {
        name: name.to_string(),
        valid: preset_names().join(", "),
    }
}

pub fn preset(name: &str) -> Result<Preset> {
    SIMPNET_SOURCES
        .iter()
        .chain(ABLATION_SOURCES)
        .find(|s| s.name == name)
        .map(load)
        .ok_or_else(|| unknown(name))
}

/// A single architecture: `simpnet-300k`, or `preset/arm` for one arm of an
/// experiment.
pub fn resolve_preset(name: &str) -> Result<ArchSpec> {
    let (base, arm) = match name.split_once('/') {
        Some((b, a)) => (b, Some(a)),
        None => (name, None),
    };
    let p = preset(base)?;
    match (arm, p.arms.len()) {
        (None, 1) => Ok(p.arms[0].spec.clone()),
        (None, _) => Err(Error::Argument(format!(
            "preset `{base}` has several arms; pick one of: {}",
            p.arms.iter().map(|a| format!("{base}/{}", a.name)).collect::<Vec<_>>().join(", ")
        ))),
        (Some(a), _) => p.arm(a).map(|a| a.spec.clone()).ok_or_else(|| unknown(name)),
    }
}

/// Loads a SimpNet shortcut by name.
pub fn simpnet_preset(name: &str) -> Result<ArchSpec> {
    if !SIMPNET_PRESETS.contains(&name) {
        return Err(unknown(name));
    }
    resolve_preset(name)
}
