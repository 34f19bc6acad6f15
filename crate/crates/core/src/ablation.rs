//! Multi-seed ablation runs over stream and fusion variants.
//!
//! A plan is a set of `(variant, scenario)` cells, each trained once per
//! seed. Runs sharing a scenario reuse the same stream inputs, so guided
//! residuals are extracted once per scenario.

use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::afm::StreamWeights;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::{evaluate_inputs, stream_inputs, train_inputs, FusionMethod, ModelConfig, StreamInputs};
use crate::synth::{Scenario, SampleRecord};

/// Tolerance of the "fusion never much worse than its best stream" check.
pub const FUSION_SLACK: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Variant {
    pub use_mte: bool,
    pub fusion: FusionMethod,
}

impl Variant {
    pub const fn new(use_mte: bool, fusion: FusionMethod) -> Self {
        Variant { use_mte, fusion }
    }

    /// Neither residual input nor attention fusion.
    pub const BASELINE: Variant = Variant::new(false, FusionMethod::Sum);
    pub const MTE: Variant = Variant::new(true, FusionMethod::Sum);
    pub const AFM: Variant = Variant::new(false, FusionMethod::Afm);
    pub const MTE_AFM: Variant = Variant::new(true, FusionMethod::Afm);

    /// Rows of the stream/fusion ablation table.
    pub const TABLE_ONE: [Variant; 4] = [Variant::BASELINE, Variant::MTE, Variant::AFM, Variant::MTE_AFM];

    /// Rows of the fusion comparison (all with residual input).
    pub const TABLE_THREE: [Variant; 5] = [
        Variant::new(true, FusionMethod::Max),
        Variant::new(true, FusionMethod::Min),
        Variant::new(true, FusionMethod::Sum),
        Variant::new(true, FusionMethod::Concat),
        Variant::new(true, FusionMethod::Afm),
    ];

    pub fn label(self) -> String {
        match (self.use_mte, self.fusion) {
            (false, FusionMethod::Sum) => "none".into(),
            (true, FusionMethod::Sum) => "mte".into(),
            (false, FusionMethod::Afm) => "afm".into(),
            (true, FusionMethod::Afm) => "mte+afm".into(),
            (true, f) => format!("mte+{f}"),
            (false, f) => f.to_string(),
        }
    }

    pub fn config(self, base: &ModelConfig, seed: u64) -> ModelConfig {
        ModelConfig {
            use_mte: self.use_mte,
            use_afm: self.fusion == FusionMethod::Afm,
            fusion: self.fusion,
            seed,
            ..base.clone()
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Outcome of one trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub variant: Variant,
    pub scenario: Scenario,
    pub seed: u64,
    /// Test accuracy of the detector and of the two auxiliary heads.
    pub fused: f64,
    pub rgb: f64,
    pub gr: f64,
    pub auc: Option<f64>,
    pub weights: StreamWeights,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct ScenarioData {
    pub train: Vec<(Image, usize)>,
    pub test: Vec<(Image, usize)>,
}

impl ScenarioData {
    /// Degrades raw generated splits with `scenario`.
    pub fn from_records(train: &[SampleRecord], test: &[SampleRecord], scenario: Scenario) -> Result<Self> {
        let degrade = |set: &[SampleRecord]| {
            set.iter()
                .map(|s| Ok((scenario.apply(&s.image)?, s.label)))
                .collect::<Result<Vec<_>>>()
        };
        Ok(ScenarioData {
            train: degrade(train)?,
            test: degrade(test)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationPlan {
    pub base: ModelConfig,
    pub seeds: Vec<u64>,
    pub cells: Vec<(Variant, Scenario)>,
}

impl AblationPlan {
    /// The four stream/fusion variants on every scenario.
    pub fn table_one(base: ModelConfig, seeds: Vec<u64>, scenarios: &[Scenario]) -> Self {
        let cells = scenarios
            .iter()
            .flat_map(|&s| Variant::TABLE_ONE.into_iter().map(move |v| (v, s)))
            .collect();
        AblationPlan { base, seeds, cells }
    }

    /// Adds the fusion comparison on `scenario`, skipping cells already planned.
    pub fn with_fusion_study(mut self, scenario: Scenario) -> Self {
        for v in Variant::TABLE_THREE {
            if !self.cells.contains(&(v, scenario)) {
                self.cells.push((v, scenario));
            }
        }
        self
    }

    pub fn run_count(&self) -> usize {
        self.cells.len() * self.seeds.len()
    }

    pub fn scenarios(&self) -> Vec<Scenario> {
        let mut out: Vec<Scenario> = Vec::new();
        for &(_, s) in &self.cells {
            if !out.contains(&s) {
                out.push(s);
            }
        }
        out
    }

    /// Trains and evaluates every cell and seed. `load` supplies the
    /// images of one scenario; `on_run` sees each record as it completes.
    pub fn run(
        &self,
        mut load: impl FnMut(Scenario) -> Result<ScenarioData>,
        mut on_run: impl FnMut(&RunRecord),
    ) -> Result<AblationResults> {
        if self.seeds.is_empty() || self.cells.is_empty() {
            return Err(Error::InvalidParameter("ablation plan has no runs".into()));
        }
        self.base.validate()?;
        let mut runs = Vec::with_capacity(self.run_count());
        for scenario in self.scenarios() {
            let data = load(scenario)?;
            if data.train.is_empty() || data.test.is_empty() {
                return Err(Error::EmptyDataset);
            }
            for use_mte in [false, true] {
                let variants: Vec<Variant> = self
                    .cells
                    .iter()
                    .filter(|(v, s)| *s == scenario && v.use_mte == use_mte)
                    .map(|(v, _)| *v)
                    .collect();
                if variants.is_empty() {
                    continue;
                }
                let prep_cfg = ModelConfig {
                    use_mte,
                    ..self.base.clone()
                };
                let prepare = |set: &[(Image, usize)]| -> Result<(Vec<StreamInputs>, Vec<usize>)> {
                    let inputs = set
                        .iter()
                        .map(|(img, _)| stream_inputs(img, &prep_cfg))
                        .collect::<Result<Vec<_>>>()?;
                    Ok((inputs, set.iter().map(|(_, l)| *l).collect()))
                };
                let (train_x, train_y) = prepare(&data.train)?;
                let (test_x, test_y) = prepare(&data.test)?;
                for variant in variants {
                    for &seed in &self.seeds {
                        let started = Instant::now();
                        let ck = train_inputs(variant.config(&self.base, seed), &train_x, &train_y)?;
                        let ev = evaluate_inputs(&ck.model, &test_x, &test_y)?;
                        let rec = RunRecord {
                            variant,
                            scenario,
                            seed,
                            fused: ev.fused.accuracy,
                            rgb: ev.rgb.accuracy,
                            gr: ev.gr.accuracy,
                            auc: ev.fused.auc,
                            weights: ck.model.weights,
                            seconds: started.elapsed().as_secs_f64(),
                        };
                        on_run(&rec);
                        runs.push(rec);
                    }
                }
            }
        }
        Ok(AblationResults { runs })
    }
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(xs: &[f64]) -> Option<Stat> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Stat {
            mean,
            std,
            n: xs.len(),
        })
    }
}

/// Seed-averaged accuracies of one cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub fused: Stat,
    pub rgb: Stat,
    pub gr: Stat,
}

/// A rows × columns grid of seed-averaged accuracies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<Option<Stat>>)>,
}

impl Table {
    /// Aligned text; cells show `mean ± std` when more than one seed ran.
    pub fn render_text(&self) -> String {
        let cell = |s: &Option<Stat>| match s {
            None => "-".to_string(),
            Some(s) if s.n > 1 => format!("{:.2} ± {:.2}", 100.0 * s.mean, 100.0 * s.std),
            Some(s) => format!("{:.2}", 100.0 * s.mean),
        };
        let mut grid = vec![std::iter::once("variant".to_string())
            .chain(self.columns.iter().cloned())
            .collect::<Vec<_>>()];
        for (label, cells) in &self.rows {
            grid.push(std::iter::once(label.clone()).chain(cells.iter().map(cell)).collect());
        }
        let widths: Vec<usize> = (0..grid[0].len())
            .map(|c| grid.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = format!("{} (test ACC %)\n", self.name);
        for row in grid {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .map(|(v, w)| format!("{v:<w$}"))
                .collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
        }
        out
    }

    /// One tab-separated record per cell: `table row column mean std n`.
    pub fn render_records(&self) -> String {
        let mut out = String::new();
        for (label, cells) in &self.rows {
            for (col, s) in self.columns.iter().zip(cells) {
                if let Some(s) = s {
                    out.push_str(&format!(
                        "{}\t{label}\t{col}\t{:.6}\t{:.6}\t{}\n",
                        self.name, s.mean, s.std, s.n
                    ));
                }
            }
        }
        out
    }
}

/// Outcome of one directional claim; `passed` is `None` when the cells it
/// needs were not run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: Option<bool>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AblationResults {
    pub runs: Vec<RunRecord>,
}

impl AblationResults {
    pub fn summary(&self, variant: Variant, scenario: Scenario) -> Option<CellSummary> {
        let runs: Vec<&RunRecord> = self
            .runs
            .iter()
            .filter(|r| r.variant == variant && r.scenario == scenario)
            .collect();
        let pick = |f: fn(&RunRecord) -> f64| Stat::of(&runs.iter().map(|r| f(r)).collect::<Vec<_>>());
        Some(CellSummary {
            fused: pick(|r| r.fused)?,
            rgb: pick(|r| r.rgb)?,
            gr: pick(|r| r.gr)?,
        })
    }

    fn mean(&self, variant: Variant, scenario: Scenario) -> Option<f64> {
        self.summary(variant, scenario).map(|s| s.fused.mean)
    }

    /// Scenarios present in the runs, in canonical order.
    pub fn scenarios(&self) -> Vec<Scenario> {
        Scenario::ALL
            .into_iter()
            .filter(|s| self.runs.iter().any(|r| r.scenario == *s))
            .collect()
    }

    fn table(&self, name: &str, variants: &[Variant], scenarios: &[Scenario]) -> Table {
        Table {
            name: name.into(),
            columns: scenarios.iter().map(|s| s.to_string()).collect(),
            rows: variants
                .iter()
                .map(|&v| {
                    let cells = scenarios
                        .iter()
                        .map(|&s| self.summary(v, s).map(|c| c.fused))
                        .collect();
                    (v.label(), cells)
                })
                .collect(),
        }
    }

    /// Stream/fusion ablation: 4 rows, one accuracy column per scenario.
    pub fn table_one(&self) -> Table {
        self.table("ablation", &Variant::TABLE_ONE, &self.scenarios())
    }

    /// Fusion comparison on `scenario`.
    pub fn table_three(&self, scenario: Scenario) -> Table {
        self.table("fusion", &Variant::TABLE_THREE, &[scenario])
    }

    fn compare(&self, name: String, lhs: (Variant, Scenario), rhs: (Variant, Scenario)) -> Check {
        match (self.mean(lhs.0, lhs.1), self.mean(rhs.0, rhs.1)) {
            (Some(a), Some(b)) => Check {
                name,
                passed: Some(a >= b),
                detail: format!("{:.4} vs {:.4}", a, b),
            },
            _ => Check {
                name,
                passed: None,
                detail: "cells not run".into(),
            },
        }
    }

    /// Attention fusion with residual input beats the plain baseline under compression.
    pub fn check_mte_afm_vs_baseline(&self) -> Check {
        self.compare(
            "jp60: mte+afm >= none".into(),
            (Variant::MTE_AFM, Scenario::Jp60),
            (Variant::BASELINE, Scenario::Jp60),
        )
    }

    /// Of the two single additions, the residual input is the better one on clean data.
    pub fn check_mte_best_single(&self) -> Check {
        self.compare(
            "raw: mte >= afm".into(),
            (Variant::MTE, Scenario::Raw),
            (Variant::AFM, Scenario::Raw),
        )
    }

    /// In every cell, the detector is within [`FUSION_SLACK`] of its better stream head.
    pub fn check_fusion_slack(&self) -> Check {
        let mut worst: Option<(f64, String)> = None;
        for s in self.scenarios() {
            for v in Variant::TABLE_ONE.iter().chain(&Variant::TABLE_THREE) {
                if let Some(c) = self.summary(*v, s) {
                    let margin = c.fused.mean - c.rgb.mean.max(c.gr.mean) + FUSION_SLACK;
                    if worst.as_ref().is_none_or(|(m, _)| margin < *m) {
                        worst = Some((
                            margin,
                            format!(
                                "{v} on {s}: fused {:.4}, streams {:.4}/{:.4}",
                                c.fused.mean, c.rgb.mean, c.gr.mean
                            ),
                        ));
                    }
                }
            }
        }
        let name = format!("fused >= max(stream) - {FUSION_SLACK}");
        match worst {
            Some((m, detail)) => Check {
                name,
                passed: Some(m >= 0.0),
                detail: format!("tightest cell {detail}"),
            },
            None => Check {
                name,
                passed: None,
                detail: "no runs".into(),
            },
        }
    }

    /// Attention fusion against each element-wise fusion on `scenario`.
    pub fn check_fusion_methods(&self, scenario: Scenario) -> Vec<Check> {
        Variant::TABLE_THREE
            .iter()
            .filter(|v| v.fusion != FusionMethod::Afm)
            .map(|&v| {
                self.compare(
                    format!("{scenario}: mte+afm >= {v}"),
                    (Variant::MTE_AFM, scenario),
                    (v, scenario),
                )
            })
            .collect()
    }

    /// Attention fusion adds to the residual input under compression.
    pub fn check_afm_adds_to_mte(&self) -> Check {
        self.compare(
            "jp60: mte+afm >= mte".into(),
            (Variant::MTE_AFM, Scenario::Jp60),
            (Variant::MTE, Scenario::Jp60),
        )
    }

    /// Residual head at least as accurate as the spatial head on clean data.
    pub fn check_residual_advantage(&self) -> Check {
        let name = "raw: residual head >= spatial head".to_string();
        match self.summary(Variant::MTE_AFM, Scenario::Raw) {
            Some(c) => Check {
                name,
                passed: Some(c.gr.mean >= c.rgb.mean),
                detail: format!("{:.4} vs {:.4}", c.gr.mean, c.rgb.mean),
            },
            None => Check {
                name,
                passed: None,
                detail: "cells not run".into(),
            },
        }
    }

    /// Every directional check the runs allow.
    pub fn checks(&self) -> Vec<Check> {
        let mut out = vec![
            self.check_mte_afm_vs_baseline(),
            self.check_mte_best_single(),
            self.check_fusion_slack(),
            self.check_afm_adds_to_mte(),
            self.check_residual_advantage(),
        ];
        out.extend(self.check_fusion_methods(Scenario::Jp60));
        out
    }

    /// Per-run records: `run variant scenario seed fused rgb gr alpha1 alpha2 seconds`.
    pub fn render_runs(&self) -> String {
        let mut out = String::new();
        for r in &self.runs {
            out.push_str(&format!(
                "run\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.2}\n",
                r.variant, r.scenario, r.seed, r.fused, r.rgb, r.gr, r.weights.alpha[0], r.weights.alpha[1], r.seconds
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(variant: Variant, scenario: Scenario, seed: u64, fused: f64, rgb: f64, gr: f64) -> RunRecord {
        RunRecord {
            variant,
            scenario,
            seed,
            fused,
            rgb,
            gr,
            auc: None,
            weights: StreamWeights::default(),
            seconds: 0.0,
        }
    }

    #[test]
    fn stat_mean_and_sample_std() {
        let s = Stat::of(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((s.mean, s.std, s.n), (2.0, 1.0, 3));
        assert_eq!(Stat::of(&[0.5]).unwrap().std, 0.0);
        assert!(Stat::of(&[]).is_none());
    }

    #[test]
    fn table_one_layout() {
        let mut runs = Vec::new();
        for s in Scenario::ALL {
            for v in Variant::TABLE_ONE {
                for seed in 0..2 {
                    runs.push(rec(v, s, seed, 0.5 + 0.1 * seed as f64, 0.4, 0.4));
                }
            }
        }
        let res = AblationResults { runs };
        let t = res.table_one();
        assert_eq!(t.rows.len(), 4);
        assert!(t.rows.iter().all(|(_, c)| c.len() == 3));
        let text = t.render_text();
        assert!(text.contains("55.00 ± 7.07"), "{text}");
        assert_eq!(t.render_records().lines().count(), 12);
    }

    #[test]
    fn checks_compare_means() {
        let runs = vec![
            rec(Variant::MTE_AFM, Scenario::Jp60, 0, 0.8, 0.5, 0.78),
            rec(Variant::BASELINE, Scenario::Jp60, 0, 0.6, 0.6, 0.55),
            rec(Variant::new(true, FusionMethod::Max), Scenario::Jp60, 0, 0.85, 0.5, 0.8),
        ];
        let res = AblationResults { runs };
        assert_eq!(res.check_mte_afm_vs_baseline().passed, Some(true));
        assert_eq!(res.check_mte_best_single().passed, None);
        assert_eq!(res.check_fusion_slack().passed, Some(true));
        let fusion = res.check_fusion_methods(Scenario::Jp60);
        assert_eq!(fusion.len(), 4);
        assert_eq!(fusion[0].passed, Some(false));
        assert_eq!(fusion[1].passed, None);
    }

    #[test]
    fn slack_check_flags_weak_fusion() {
        let res = AblationResults {
            runs: vec![rec(Variant::MTE, Scenario::Raw, 0, 0.70, 0.5, 0.74)],
        };
        assert_eq!(res.check_fusion_slack().passed, Some(false));
    }

    #[test]
    fn plan_shares_cells() {
        let plan = AblationPlan::table_one(ModelConfig::default(), vec![0, 1], &Scenario::ALL)
            .with_fusion_study(Scenario::Jp60);
        assert_eq!(plan.cells.len(), 12 + 3);
        assert_eq!(plan.run_count(), 30);
        assert_eq!(plan.scenarios(), Scenario::ALL.to_vec());
    }

    #[test]
    fn labels() {
        assert_eq!(Variant::BASELINE.label(), "none");
        assert_eq!(Variant::MTE_AFM.label(), "mte+afm");
        assert_eq!(Variant::TABLE_THREE[3].label(), "mte+concat");
    }
}
