//! Static design audit of an [`ArchSpec`].
//!
//! | rule | checks | severity |
//! |------|--------|----------|
//! | R1 | widths never shrink with depth, and grow somewhere | warn |
//! | R2 | no 1×1 convolution among the first third of convolutions | fail |
//! | R3 | no downsampling before the third convolution | warn |
//! | R4 | no layer holds more than 35% of all parameters | warn |
//! | R5 | final map not below 2×2 while the last group holds > 50% | warn |
//! | R6 | kernels above 3×3, with their cost relative to 3×3 | info |
//! | R7 | all layers of a group see one feature-map size | info |

use std::fmt::{self, Write as _};

use serde::Serialize;

use crate::archdsl::{ArchSpec, LayerSpec};
use crate::network::{LedgerRow, ParamLedger};
use crate::tensor::ImageShape;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Rule {
    R1,
    R2,
    R3,
    R4,
    R5,
    R6,
    R7,
}

impl Rule {
    pub const ALL: [Rule; 7] = [Rule::R1, Rule::R2, Rule::R3, Rule::R4, Rule::R5, Rule::R6, Rule::R7];

    pub fn citation(self) -> &'static str {
        match self {
            Rule::R1 => "gradual expansion (pyramid widths)",
            Rule::R2 => "local correlation preservation (early 1x1)",
            Rule::R3 => "maximum information utilization (early pooling)",
            Rule::R4 => "balanced distribution",
            Rule::R5 => "end-layer shrinkage",
            Rule::R6 => "kernel cost",
            Rule::R7 => "homogeneous groups",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Severity {
    Info,
    Warn,
    Fail,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::Info => "info",
            Severity::Warn => "warn",
            Severity::Fail => "fail",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Finding {
    pub rule: Rule,
    pub severity: Severity,
    pub layer: String,
    pub measurement: String,
    pub citation: String,
}

/// How many places a rule was checked, and how many of them produced a finding.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RuleSummary {
    pub rule: Rule,
    pub evaluated: usize,
    pub findings: usize,
}

/// Thresholds; none of them is fixed by the design principles themselves.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuditConfig {
    /// Fraction of the convolutions counted as "early" for R2.
    pub early_fraction: f64,
    /// Downsampling must not come before this many convolutions (R3).
    pub min_convs_before_downsampling: usize,
    /// R4 share limit.
    pub max_layer_share: f64,
    /// R5 smallest acceptable final map side.
    pub min_final_map: usize,
    /// R5 last-group share limit.
    pub max_last_group_share: f64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            early_fraction: 1.0 / 3.0,
            min_convs_before_downsampling: 3,
            max_layer_share: 0.35,
            min_final_map: 2,
            max_last_group_share: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuditReport {
    pub arch: String,
    pub input: ImageShape,
    pub ledger: ParamLedger,
    pub findings: Vec<Finding>,
    pub summary: Vec<RuleSummary>,
    /// Set when the spatial dims collapse; the ledger then stops there.
    pub collapse: Option<String>,
}

impl AuditReport {
    pub fn count(&self, severity: Severity) -> usize {
        self.findings.iter().filter(|f| f.severity == severity).count()
    }

    pub fn has(&self, rule: Rule, severity: Severity) -> bool {
        self.findings.iter().any(|f| f.rule == rule && f.severity == severity)
    }

    pub fn findings_for(&self, rule: Rule) -> impl Iterator<Item = &Finding> {
        self.findings.iter().filter(move |f| f.rule == rule)
    }

    /// One finding per line: rule, severity, layer, measurement, citation,
    /// separated by tabs.
    pub fn records(&self) -> String {
        let mut out = String::new();
        for f in &self.findings {
            let _ = writeln!(out, "{}\t{}\t{}\t{}\t{}", f.rule, f.severity, f.layer, f.measurement, f.citation);
        }
        out
    }

    pub fn render_table(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for AuditReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = if self.arch.is_empty() { "(unnamed)" } else { &self.arch };
        writeln!(f, "architecture: {name}  input: {}", self.input)?;
        if let Some(c) = &self.collapse {
            writeln!(f, "SHAPE COLLAPSE: {c}")?;
        }
        writeln!(f)?;
        writeln!(f, "{:<12} {:<8} {:>12} {:>7} {:>16}  out", "layer", "kind", "params", "share", "macs")?;
        let total = self.ledger.total_params().max(1) as f64;
        for r in &self.ledger.rows {
            writeln!(
                f,
                "{:<12} {:<8} {:>12} {:>6.1}% {:>16}  {}",
                r.name,
                r.kind,
                r.params,
                100.0 * r.params as f64 / total,
                r.macs,
                r.out_shape
            )?;
        }
        writeln!(f)?;
        writeln!(f, "total params: {}", self.ledger.total_params())?;
        writeln!(f, "total MACs: {}", self.ledger.total_macs())?;
        writeln!(f)?;
        writeln!(f, "{:<5} {:>9} {:>9}  principle", "rule", "evaluated", "findings")?;
        for s in &self.summary {
            writeln!(f, "{:<5} {:>9} {:>9}  {}", s.rule, s.evaluated, s.findings, s.rule.citation())?;
        }
        writeln!(f)?;
        writeln!(
            f,
            "findings: {} fail, {} warn, {} info",
            self.count(Severity::Fail),
            self.count(Severity::Warn),
            self.count(Severity::Info)
        )?;
        for x in &self.findings {
            writeln!(f, "  {} {:<4} {:<10} {}", x.rule, x.severity, x.layer, x.measurement)?;
        }
        Ok(())
    }
}

struct Walked {
    name: String,
    group: Option<usize>,
    spec: LayerSpec,
    input: ImageShape,
    output: ImageShape,
}

/// Resolves as far as the shapes allow.
fn walk(spec: &ArchSpec) -> (Vec<Walked>, Option<String>) {
    let mut counters = std::collections::HashMap::<&str, usize>::new();
    let mut shape = spec.input;
    let mut out = Vec::new();
    let entries = spec
        .groups
        .iter()
        .enumerate()
        .flat_map(|(gi, g)| g.layers.iter().map(move |l| (Some(gi), l)))
        .chain(spec.tail.iter().map(|l| (None, l)));
    for (group, l) in entries {
        let n = counters.entry(l.keyword()).or_default();
        *n += 1;
        let name = format!("{}{}", l.keyword(), n);
        match l.output_shape(shape) {
            Ok(output) => {
                out.push(Walked {
                    name,
                    group,
                    spec: l.clone(),
                    input: shape,
                    output,
                });
                shape = output;
            }
            Err(msg) => return (out, Some(format!("{name}: {msg}"))),
        }
    }
    (out, None)
}

fn downsamples(l: &Walked) -> bool {
    l.output.h < l.input.h || l.output.w < l.input.w
}

struct Auditor<'a> {
    cfg: &'a AuditConfig,
    findings: Vec<Finding>,
    summary: Vec<RuleSummary>,
}

impl Auditor<'_> {
    fn rule(&mut self, rule: Rule, evaluated: usize, found: Vec<(Severity, String, String)>) {
        self.summary.push(RuleSummary {
            rule,
            evaluated,
            findings: found.len(),
        });
        for (severity, layer, measurement) in found {
            self.findings.push(Finding {
                rule,
                severity,
                layer,
                measurement,
                citation: rule.citation().to_string(),
            });
        }
    }
}

/// Audits `spec` as if fed `input`. Never fails; shape collapse is
/// recorded in the report.
pub fn audit(spec: &ArchSpec, input: ImageShape, cfg: &AuditConfig) -> AuditReport {
    let spec = spec.clone().with_input(input);
    let (layers, collapse) = walk(&spec);
    let ledger = ParamLedger::new(
        layers
            .iter()
            .map(|l| LedgerRow {
                name: l.name.clone(),
                kind: l.spec.keyword().to_string(),
                params: l.spec.param_count(l.input),
                macs: l.spec.macs(l.input, l.output),
                out_shape: l.output,
            })
            .collect(),
    );
    let total = ledger.total_params();
    let convs: Vec<&Walked> = layers.iter().filter(|l| l.spec.is_conv()).collect();
    let mut a = Auditor {
        cfg,
        findings: Vec::new(),
        summary: Vec::new(),
    };

    // R1
    let mut found = Vec::new();
    let mut evaluated = 0;
    for pair in convs.windows(2) {
        evaluated += 1;
        let (prev, cur) = (pair[0], pair[1]);
        if cur.output.c < prev.output.c {
            found.push((
                Severity::Warn,
                cur.name.clone(),
                format!("width shrinks {} -> {} after {}", prev.output.c, cur.output.c, prev.name),
            ));
        }
    }
    if convs.len() > 1 {
        evaluated += 1;
        if convs.iter().all(|c| c.output.c == convs[0].output.c) {
            found.push((
                Severity::Warn,
                "network".into(),
                format!("all {} convolutions have width {}; no expansion", convs.len(), convs[0].output.c),
            ));
        }
    }
    a.rule(Rule::R1, evaluated, found);

    // R2
    let early = (convs.len() as f64 * a.cfg.early_fraction).ceil() as usize;
    let found = convs
        .iter()
        .take(early)
        .enumerate()
        .filter(|(_, c)| c.spec.kernel() == Some(1))
        .map(|(i, c)| {
            (
                Severity::Fail,
                c.name.clone(),
                format!("1x1 kernel at convolution {} of {} (early: first {early}); use 2x2", i + 1, convs.len()),
            )
        })
        .collect();
    a.rule(Rule::R2, early.min(convs.len()), found);

    // R3
    let mut found = Vec::new();
    let mut evaluated = 0;
    let mut convs_seen = 0;
    for l in &layers {
        if downsamples(l) && l.group.is_some() {
            evaluated += 1;
            if convs_seen < a.cfg.min_convs_before_downsampling {
                found.push((
                    Severity::Warn,
                    l.name.clone(),
                    format!(
                        "downsamples {}x{} -> {}x{} after only {convs_seen} convolution(s)",
                        l.input.h, l.input.w, l.output.h, l.output.w
                    ),
                ));
            }
        }
        if l.spec.is_conv() {
            convs_seen += 1;
        }
    }
    a.rule(Rule::R3, evaluated, found);

    // R4
    let weighted: Vec<&LedgerRow> = ledger.rows.iter().filter(|r| r.params > 0).collect();
    let found = weighted
        .iter()
        .filter(|r| r.params as f64 > a.cfg.max_layer_share * total as f64)
        .map(|r| {
            (
                Severity::Warn,
                r.name.clone(),
                format!(
                    "holds {:.1}% of {total} parameters (limit {:.0}%)",
                    100.0 * r.params as f64 / total as f64,
                    100.0 * a.cfg.max_layer_share
                ),
            )
        })
        .collect();
    a.rule(Rule::R4, weighted.len(), found);

    // R5
    let mut found = Vec::new();
    let last_group = spec.groups.len().checked_sub(1);
    let body_end = layers.iter().rev().find(|l| l.group.is_some());
    let evaluated = usize::from(body_end.is_some() && collapse.is_none());
    if let (Some(end), Some(lg), None) = (body_end, last_group, &collapse) {
        let group_params: usize = layers
            .iter()
            .filter(|l| l.group == Some(lg))
            .map(|l| l.spec.param_count(l.input))
            .sum();
        let share = group_params as f64 / total.max(1) as f64;
        let small = end.output.h < a.cfg.min_final_map || end.output.w < a.cfg.min_final_map;
        if small && share > a.cfg.max_last_group_share {
            found.push((
                Severity::Warn,
                spec.groups[lg].name.clone(),
                format!(
                    "final map {}x{} with {:.1}% of parameters in the last group",
                    end.output.h,
                    end.output.w,
                    100.0 * share
                ),
            ));
        }
    }
    a.rule(Rule::R5, evaluated, found);

    // R6
    let found = convs
        .iter()
        .filter_map(|c| {
            let k = c.spec.kernel()?;
            (k > 3).then(|| {
                (
                    Severity::Info,
                    c.name.clone(),
                    format!("{k}x{k} kernel costs {}/9 = {:.2}x the MACs of 3x3", k * k, (k * k) as f64 / 9.0),
                )
            })
        })
        .collect();
    a.rule(Rule::R6, convs.len(), found);

    // R7
    let mut found = Vec::new();
    for (gi, g) in spec.groups.iter().enumerate() {
        let mut sizes: Vec<(usize, usize)> = layers
            .iter()
            .filter(|l| l.group == Some(gi))
            .map(|l| (l.input.h, l.input.w))
            .collect();
        sizes.dedup();
        if sizes.len() > 1 {
            let list = sizes.iter().map(|(h, w)| format!("{h}x{w}")).collect::<Vec<_>>().join(", ");
            found.push((Severity::Info, g.name.clone(), format!("layers see several map sizes: {list}")));
        }
    }
    a.rule(Rule::R7, spec.groups.len(), found);

    AuditReport {
        arch: spec.name.clone(),
        input,
        ledger,
        findings: a.findings,
        summary: a.summary,
        collapse,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub a: String,
    pub b: String,
    pub params: (usize, usize),
    pub macs: (u64, u64),
    /// (rule, findings in a, findings in b)
    pub rules: Vec<(Rule, usize, usize)>,
}

impl Comparison {
    /// `b` relative to `a`.
    pub fn param_ratio(&self) -> f64 {
        self.params.1 as f64 / self.params.0.max(1) as f64
    }

    pub fn param_delta(&self) -> f64 {
        self.param_ratio() - 1.0
    }

    pub fn identical(&self) -> bool {
        self.params.0 == self.params.1 && self.macs.0 == self.macs.1 && self.rules.iter().all(|r| r.1 == r.2)
    }
}

pub fn compare(a: &AuditReport, b: &AuditReport) -> Comparison {
    let count = |r: &AuditReport, rule| r.findings_for(rule).count();
    Comparison {
        a: a.arch.clone(),
        b: b.arch.clone(),
        params: (a.ledger.total_params(), b.ledger.total_params()),
        macs: (a.ledger.total_macs(), b.ledger.total_macs()),
        rules: Rule::ALL.iter().map(|&r| (r, count(a, r), count(b, r))).collect(),
    }
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mark = |x: bool| if x { "=" } else { "≠" };
        writeln!(f, "{:<14} {:>16} {:>16} {:>10}", "", self.a, self.b, "b/a")?;
        writeln!(
            f,
            "{:<14} {:>16} {:>16} {:>10.4}",
            "params",
            self.params.0,
            self.params.1,
            self.param_ratio()
        )?;
        writeln!(
            f,
            "{:<14} {:>16} {:>16} {:>10.4}",
            "MACs",
            self.macs.0,
            self.macs.1,
            self.macs.1 as f64 / self.macs.0.max(1) as f64
        )?;
        for (rule, x, y) in &self.rules {
            writeln!(f, "{:<14} {:>16} {:>16} {:>10}", format!("{rule} findings"), x, y, mark(x == y))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archdsl::{parse, resolve_preset};

    fn run(text: &str) -> AuditReport {
        let spec = parse(text).unwrap();
        audit(&spec, spec.input, &AuditConfig::default())
    }

    const BASE: &str = "input 3 32 32\ngroup g1\nconv 3 16\nrelu\nconv 3 16\nrelu\nconv 3 24\nrelu\nmaxpool 2\ngroup g2\nconv 3 24\nrelu\nconv 3 32\nrelu\nconv 3 32\nrelu\nconv 3 32\nrelu\ngap\nflatten\ndense 10\n";

    #[test]
    fn clean_fixture_has_no_findings() {
        let r = run(BASE);
        assert!(r.findings.is_empty(), "{}", r.records());
        assert_eq!(r.summary.len(), 7);
    }

    #[test]
    fn r1_pyramid() {
        let r = run(&BASE.replace("conv 3 32\nrelu\ngap", "conv 3 8\nrelu\ngap"));
        assert!(r.has(Rule::R1, Severity::Warn));
        let flat = run("input 1 8 8\ngroup g\nconv 3 8\nconv 3 8\nconv 3 8\ngap\ndense 2\n");
        assert_eq!(flat.findings_for(Rule::R1).count(), 1);
    }

    #[test]
    fn r2_early_one_by_one() {
        let r = run(&BASE.replacen("conv 3 16", "conv 1 16", 1));
        let f: Vec<_> = r.findings_for(Rule::R2).collect();
        assert_eq!(f.len(), 1);
        assert_eq!((f[0].severity, f[0].layer.as_str()), (Severity::Fail, "conv1"));
        // A 1x1 late in the network is allowed.
        let late = run(&BASE.replace("conv 3 32\nrelu\ngap", "conv 1 32\nrelu\ngap"));
        assert_eq!(late.findings_for(Rule::R2).count(), 0);
    }

    #[test]
    fn r3_early_pooling() {
        let r = run("input 3 32 32\ngroup g1\nconv 3 16\nmaxpool 2\ngroup g2\nconv 3 16\nconv 3 32\nconv 3 32\ngap\ndense 10\n");
        assert_eq!(r.findings_for(Rule::R3).next().unwrap().layer, "maxpool1");
        let strided = run("input 3 32 32\ngroup g1\nconv 3 16 s2\nconv 3 16\nconv 3 32\ngap\ndense 10\n");
        assert!(strided.has(Rule::R3, Severity::Warn));
    }

    #[test]
    fn r4_balance_and_wide_end() {
        let r = run(&BASE.replace("conv 3 32\nrelu\ngap", "conv 3 512\nrelu\ngap"));
        assert!(r.findings_for(Rule::R4).any(|f| f.layer == "conv7"));
        let p = crate::archdsl::preset("balanced-vs-wide-end-128k").unwrap();
        for arm in &p.arms {
            let r = audit(&arm.spec, arm.spec.input, &AuditConfig::default());
            assert_eq!(r.findings_for(Rule::R4).count() > 0, arm.name == "wide-end", "{}", arm.name);
        }
    }

    #[test]
    fn r5_end_shrinkage() {
        let text = "input 1 8 8\ngroup g1\nconv 3 4\nconv 3 4\nconv 3 4\nmaxpool 2\nmaxpool 2\ngroup g2\nmaxpool 2\nconv 3 64\nconv 3 64\ngap\ndense 2\n";
        let r = run(text);
        assert!(r.has(Rule::R5, Severity::Warn));
        assert_eq!(run(BASE).findings_for(Rule::R5).count(), 0);
    }

    #[test]
    fn r6_kernel_cost() {
        let r = run(&BASE.replacen("conv 3 24", "conv 5 24", 1));
        let f = r.findings_for(Rule::R6).next().unwrap();
        assert!(f.measurement.contains("25/9 = 2.78x"), "{}", f.measurement);
        assert_eq!(run(BASE).findings_for(Rule::R6).count(), 0);
    }

    #[test]
    fn r7_homogeneity() {
        let r = run("input 1 16 16\ngroup g1\nconv 3 8\nconv 3 8\nconv 3 8\nmaxpool 2\nconv 3 16\ngap\ndense 2\n");
        assert!(r.has(Rule::R7, Severity::Info));
        assert_eq!(run(BASE).findings_for(Rule::R7).count(), 0);
    }

    #[test]
    fn collapse_reported_not_fatal() {
        let r = run("input 1 4 4\ngroup g\nconv 3 4\nconv 3 4\nconv 3 4\nmaxpool 2\nmaxpool 2\nmaxpool 2\ngap\ndense 2\n");
        assert!(r.collapse.as_deref().unwrap().starts_with("maxpool3"));
        assert_eq!(r.ledger.rows.len(), 5);
    }

    #[test]
    fn simpnet_presets_have_no_fails_and_ledger_matches_build() {
        for name in crate::archdsl::SIMPNET_PRESETS {
            let spec = resolve_preset(name).unwrap();
            let r = audit(&spec, spec.input, &AuditConfig::default());
            assert_eq!(r.count(Severity::Fail), 0, "{name}");
            assert_eq!(r.ledger, spec.ledger().unwrap());
        }
        let spec = resolve_preset("simpnet-tiny").unwrap();
        let m = spec.build::<f32>(0).unwrap();
        let r = audit(&spec, spec.input, &AuditConfig::default());
        assert_eq!(r.ledger.total_params(), crate::network::count_params(&m).unwrap().total_params());
    }

    #[test]
    fn deterministic_and_comparable() {
        let spec = resolve_preset("simpnet-300k").unwrap();
        let a = audit(&spec, spec.input, &AuditConfig::default());
        let b = audit(&spec, spec.input, &AuditConfig::default());
        assert_eq!(a.to_string(), b.to_string());
        assert_eq!(a.records(), b.records());
        assert!(compare(&a, &b).identical());

        let k = crate::archdsl::preset("kernel-size").unwrap();
        let small = &k.arm("k3-300k").unwrap().spec;
        let big = &k.arm("k3-1.6m").unwrap().spec;
        let c = compare(&audit(small, small.input, &AuditConfig::default()), &audit(big, big.input, &AuditConfig::default()));
        assert!((c.param_ratio() - 5.33).abs() < 0.15, "{}", c.param_ratio());
    }
}
