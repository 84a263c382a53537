//! End-to-end analysis of one trial dataset: pseudo-outcomes, global test,
//! effect-modifier ranking, CATE and subgroup displays.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use hte_core::data::{load_dataset, ColumnData, OutcomeKind, SchemaConfig, TrialDataset};
use hte_core::hettest::{global_test, HetTestResult};
use hte_core::metalearners::{ate_aipw, ate_gcomp, ate_ipw, dr_learner_crossfit, CateSource, DrFormula, PropensityMode};
use hte_core::ranking::{rank_effect_modifiers, ImportanceRanking};
use hte_core::rng::derive_seed;
use hte_core::stats::{mean, sample_variance};
use serde::{Deserialize, Serialize};

use crate::config::AppConfig;

pub const REPORT_SCHEMA_VERSION: &str = "1.0";
pub const NO_EVIDENCE: &str = "no evidence against homogeneity";
pub const EVIDENCE: &str = "evidence against homogeneity";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AteSummary {
    pub gcomp: f64,
    pub ipw: f64,
    pub aipw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalTestSection {
    #[serde(flatten)]
    pub result: HetTestResult,
    pub alpha: f64,
    pub conclusion: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingSection {
    #[serde(flatten)]
    pub ranking: ImportanceRanking,
    pub top_k: Vec<String>,
    /// Set when the global test did not reject, so the ranking is exploratory only.
    pub no_evidence_against_homogeneity: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CateRow {
    pub id: String,
    pub tau_hat: f64,
    pub pseudo_outcome: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CateSection {
    pub source: CateSource,
    pub folds: Option<usize>,
    pub subjects: Vec<CateRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupRow {
    pub covariate: String,
    pub bin: String,
    pub n: usize,
    pub observed_effect: Option<f64>,
    pub observed_ci_lo: Option<f64>,
    pub observed_ci_hi: Option<f64>,
    pub dr_adjusted_effect: f64,
    pub overall_ate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub master: u64,
    pub crossfit: u64,
    pub test: u64,
    pub ranking: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub seeds: Seeds,
    pub config_hash: String,
    pub config: AppConfig,
    pub propensity_mode: PropensityMode,
    pub pseudo_outcome: DrFormula,
    pub clip_count: usize,
    pub clip_fraction: f64,
    pub crossfit_hygiene_ok: bool,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub schema_version: String,
    pub n: usize,
    pub p: usize,
    pub outcome_kind: OutcomeKind,
    pub arm_sizes: ArmSizes,
    pub ate: AteSummary,
    pub global_test: GlobalTestSection,
    pub ranking: RankingSection,
    pub cate: CateSection,
    pub subgroup_displays: Vec<SubgroupRow>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSizes {
    pub control: usize,
    pub treated: usize,
}

/// Runs the analysis on an in-memory dataset.
pub fn analyze(data: &TrialDataset, config: &AppConfig, seed: u64) -> Result<AnalysisReport> {
    let seeds = Seeds {
        master: seed,
        crossfit: derive_seed(seed, &[1]),
        test: derive_seed(seed, &[2]),
        ranking: derive_seed(seed, &[3]),
    };
    let x = &data.covariates;
    let cf = dr_learner_crossfit(data, &config.learners, &config.metalearner, seeds.crossfit)
        .context("cross-fitting the DR-learner")?;
    let nf = &cf.nuisance;
    let ate = AteSummary {
        gcomp: ate_gcomp(&nf.mu0_hat, &nf.mu1_hat),
        ipw: ate_ipw(&data.outcome, &data.treatment, &nf.pi_hat),
        aipw: ate_aipw(&data.outcome, &data.treatment, nf),
    };
    let psi = &cf.psi.psi;
    let t = &config.test;
    let test = global_test(x, psi, t.settings.statistic, t.settings.method, t.settings.permutations, seeds.test)
        .context("global heterogeneity test")?;
    let (ranking, forest) =
        rank_effect_modifiers(x, psi, &config.ranking.params, seeds.ranking).context("ranking effect modifiers")?;

    let mut warnings = cf.warnings.clone();
    warnings.extend(forest.warnings.iter().cloned());
    if !test.dropped_columns.is_empty() {
        warnings.push(format!(
            "global test dropped constant design columns: {}",
            test.dropped_columns.join(", ")
        ));
    }
    if test.degenerate {
        warnings.push("global test is degenerate: no design column varies".into());
    }
    if ranking.degenerate {
        warnings.push("ranking forest never split; all importance scores are zero".into());
    }

    let no_evidence = test.p_value > t.alpha;
    let top_k: Vec<String> = ranking
        .order
        .iter()
        .take(config.ranking.top_k)
        .map(|&j| ranking.covariates[j].clone())
        .collect();

    let ids: Vec<String> = match &data.ids {
        Some(ids) => ids.clone(),
        None => (1..=data.n()).map(|i| i.to_string()).collect(),
    };
    let subjects = ids
        .into_iter()
        .zip(&cf.tau.tau_hat)
        .zip(psi)
        .map(|((id, &tau_hat), &pseudo_outcome)| CateRow { id, tau_hat, pseudo_outcome })
        .collect();

    let mut subgroups = Vec::new();
    for name in &top_k {
        let j = x.index_of(name).expect("ranked covariate exists");
        subgroups.extend(subgroup_rows(data, j, &cf.tau.tau_hat, ate.aipw));
    }

    let (control, treated) = data.arm_sizes();
    Ok(AnalysisReport {
        schema_version: REPORT_SCHEMA_VERSION.to_string(),
        n: data.n(),
        p: data.p(),
        outcome_kind: data.outcome_kind,
        arm_sizes: ArmSizes { control, treated },
        ate,
        global_test: GlobalTestSection {
            result: test,
            alpha: t.alpha,
            conclusion: if no_evidence { NO_EVIDENCE } else { EVIDENCE }.to_string(),
        },
        ranking: RankingSection {
            ranking,
            top_k,
            no_evidence_against_homogeneity: no_evidence,
        },
        cate: CateSection {
            source: cf.tau.source,
            folds: cf.tau.folds,
            subjects,
        },
        subgroup_displays: subgroups,
        provenance: Provenance {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seeds,
            config_hash: config.hash(),
            config: config.clone(),
            propensity_mode: nf.mode,
            pseudo_outcome: config.metalearner.formula,
            clip_count: nf.clip_count,
            clip_fraction: nf.clip_fraction(),
            crossfit_hygiene_ok: nf.crossfit_hygiene_ok(),
            warnings,
        },
    })
}

/// Type-7 sample quantile of sorted data.
fn quantile(sorted: &[f64], prob: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Bins of covariate `j`: quartiles for numeric covariates, levels for categorical ones.
pub fn subgroup_bins(data: &TrialDataset, j: usize) -> Vec<(String, Vec<usize>)> {
    match &data.covariates.column(j).data {
        ColumnData::Categorical { codes, levels } => levels
            .iter()
            .enumerate()
            .map(|(k, l)| (l.clone(), (0..codes.len()).filter(|&i| codes[i] as usize == k).collect()))
            .collect(),
        ColumnData::Numeric(v) => {
            let mut sorted = v.clone();
            sorted.sort_by(f64::total_cmp);
            let mut cuts = vec![sorted[0]];
            for prob in [0.25, 0.5, 0.75] {
                let q = quantile(&sorted, prob);
                if q > *cuts.last().expect("non-empty") {
                    cuts.push(q);
                }
            }
            let max = sorted[sorted.len() - 1];
            if max > *cuts.last().expect("non-empty") || cuts.len() == 1 {
                cuts.push(max);
            }
            (1..cuts.len())
                .map(|b| {
                    let (lo, hi) = (cuts[b - 1], cuts[b]);
                    let first = b == 1;
                    let rows = (0..v.len())
                        .filter(|&i| (v[i] > lo || (first && v[i] >= lo)) && v[i] <= hi)
                        .collect();
                    let open = if first { '[' } else { '(' };
                    (format!("{open}{lo}, {hi}]"), rows)
                })
                .collect()
        }
    }
}

fn subgroup_rows(data: &TrialDataset, j: usize, tau_hat: &[f64], overall_ate: f64) -> Vec<SubgroupRow> {
    let name = &data.covariates.column(j).name;
    subgroup_bins(data, j)
        .into_iter()
        .filter(|(_, rows)| !rows.is_empty())
        .map(|(bin, rows)| {
            let (mut y1, mut y0) = (Vec::new(), Vec::new());
            for &i in &rows {
                if data.treatment[i] == 1 {
                    y1.push(data.outcome[i]);
                } else {
                    y0.push(data.outcome[i]);
                }
            }
            let observed = (!y1.is_empty() && !y0.is_empty()).then(|| mean(&y1) - mean(&y0));
            let half_width = (y1.len() > 1 && y0.len() > 1).then(|| {
                1.959_963_984_540_054 * (sample_variance(&y1) / y1.len() as f64 + sample_variance(&y0) / y0.len() as f64).sqrt()
            });
            let ci = observed.zip(half_width);
            SubgroupRow {
                covariate: name.clone(),
                bin,
                n: rows.len(),
                observed_effect: observed,
                observed_ci_lo: ci.map(|(e, h)| e - h),
                observed_ci_hi: ci.map(|(e, h)| e + h),
                dr_adjusted_effect: mean(&rows.iter().map(|&i| tau_hat[i]).collect::<Vec<_>>()),
                overall_ate,
            }
        })
        .collect()
}

/// Writes `report.json`, `cate.csv`, `ranking.csv` and `subgroups.csv`.
pub fn write_report(report: &AnalysisReport, out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("report.json"), serde_json::to_string_pretty(report)? + "\n")?;

    let mut w = csv::Writer::from_path(out.join("cate.csv"))?;
    for row in &report.cate.subjects {
        w.serialize(row)?;
    }
    w.flush()?;

    let r = &report.ranking.ranking;
    let mut w = csv::Writer::from_path(out.join("ranking.csv"))?;
    w.write_record(["rank", "covariate", "importance"])?;
    for &j in &r.order {
        w.write_record([r.rank[j].to_string(), r.covariates[j].clone(), r.scores[j].to_string()])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(out.join("subgroups.csv"))?;
    for row in &report.subgroup_displays {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Loads the inputs, runs the analysis and writes the output directory.
pub fn cmd_analyze(data_path: &Path, schema_path: &Path, config: &AppConfig, seed: u64, out: &Path) -> Result<AnalysisReport> {
    let schema = SchemaConfig::from_path(schema_path).with_context(|| format!("reading schema {}", schema_path.display()))?;
    let data = load_dataset(data_path, &schema).with_context(|| format!("loading {}", data_path.display()))?;
    let report = analyze(&data, config, seed)?;
    write_report(&report, out)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use hte_core::data::{CovariateColumn, Covariates};

    fn toy() -> TrialDataset {
        let v: Vec<f64> = (0..12).map(|i| f64::from(i)).collect();
        let cat: Vec<&str> = (0..12).map(|i| if i % 3 == 0 { "a" } else { "b" }).collect();
        let x = Covariates::new(vec![CovariateColumn::numeric("v", v), CovariateColumn::from_labels("c", &cat)]).unwrap();
        let a: Vec<u8> = (0..12).map(|i| (i % 2) as u8).collect();
        let y: Vec<f64> = (0..12).map(|i| f64::from(i % 2) * 2.0 + f64::from(i) * 0.1).collect();
        TrialDataset::new(x, a, y, OutcomeKind::Continuous).unwrap()
    }

    #[test]
    fn numeric_bins_are_quartiles_covering_all_rows() {
        let d = toy();
        let bins = subgroup_bins(&d, 0);
        assert_eq!(bins.len(), 4);
        assert_eq!(bins.iter().map(|b| b.1.len()).sum::<usize>(), 12);
        assert_eq!(bins[0].0, "[0, 2.75]");
        assert_eq!(bins[0].1, vec![0, 1, 2]);
        assert_eq!(bins[3].1, vec![9, 10, 11]);
    }

    #[test]
    fn categorical_bins_are_levels() {
        let d = toy();
        let bins = subgroup_bins(&d, 1);
        assert_eq!(bins.iter().map(|b| b.0.as_str()).collect::<Vec<_>>(), vec!["a", "b"]);
        assert_eq!(bins[0].1, vec![0, 3, 6, 9]);
    }

    #[test]
    fn observed_effect_is_arm_difference() {
        let d = toy();
        let tau = vec![1.0; 12];
        let rows = subgroup_rows(&d, 1, &tau, 2.0);
        // level a: rows 0, 3, 6, 9 → treated 3, 9; control 0, 6
        let want = (2.3 + 2.9) / 2.0 - (0.0 + 0.6) / 2.0;
        assert!((rows[0].observed_effect.unwrap() - want).abs() < 1e-12);
        assert!(rows[0].observed_ci_lo.unwrap() < want && rows[0].observed_ci_hi.unwrap() > want);
        assert_eq!(rows[0].dr_adjusted_effect, 1.0);
        assert_eq!(rows[0].overall_ate, 2.0);
    }

    #[test]
    fn tied_numeric_covariate_collapses_bins() {
        let x = Covariates::new(vec![CovariateColumn::numeric("v", vec![1.0; 6])]).unwrap();
        let d = TrialDataset::new(x, vec![0, 1, 0, 1, 0, 1], vec![0.0; 6], OutcomeKind::Continuous).unwrap();
        let bins = subgroup_bins(&d, 0);
        assert_eq!(bins.len(), 1);
        assert_eq!(bins[0].1.len(), 6);
    }
}
