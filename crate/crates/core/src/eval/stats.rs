//! Welch's t-test, pairwise comparisons, win matrices and relative
//! improvements.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::record::{MethodRun, Setting};
use crate::error::{Result, ScarfError};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub t: f64,
    pub df: f64,
    /// Two-sided.
    pub p: f64,
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased (n - 1) sample variance.
pub fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Two-sided Welch test. When both samples have zero variance the result is
/// `p = 1` for equal means and `p = 0` otherwise.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<WelchResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(ScarfError::Validation(format!(
            "Welch's test needs at least 2 samples per group, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(ScarfError::Validation("non-finite sample".into()));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, mb) = (mean(a), mean(b));
    let (va, vb) = (sample_variance(a) / na, sample_variance(b) / nb);
    let se2 = va + vb;
    if se2 == 0.0 {
        let df = na + nb - 2.0;
        return Ok(if ma == mb {
            WelchResult { t: 0.0, df, p: 1.0 }
        } else {
            WelchResult {
                t: if ma > mb { f64::INFINITY } else { f64::NEG_INFINITY },
                df,
                p: 0.0,
            }
        });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    let p = student_t_two_sided(t, df);
    Ok(WelchResult { t, df, p })
}

/// `P(|T| ≥ |t|)` for Student's t with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t == 0.0 {
        return 1.0;
    }
    let x = df / (df + t * t);
    regularized_incomplete_beta(x, df / 2.0, 0.5).clamp(0.0, 1.0)
}

/// Lanczos approximation (g = 7, 9 terms).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = C[0];
    for (k, &c) in C.iter().enumerate().skip(1) {
        acc += c / (x + k as f64);
    }
    let t = x + G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// `I_x(a, b)` by the continued fraction, evaluated with modified Lentz.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(x, a, b) / a
    } else {
        1.0 - front * beta_continued_fraction(1.0 - x, b, a) / b
    }
}

fn beta_continued_fraction(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let clamp = |v: f64| if v.abs() < TINY { TINY } else { v };
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 / clamp(1.0 - qab * x / qap);
    let mut h = d;
    for m in 1..=10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 / clamp(1.0 + aa * d);
        c = clamp(1.0 + aa / c);
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 / clamp(1.0 + aa * d);
        c = clamp(1.0 + aa / c);
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    Win,
    Loss,
    Tie,
}

/// Outcome for `a` against `b`: a tie unless `p < p_threshold`, otherwise
/// decided by the larger mean. Fewer than two samples on either side is a tie.
pub fn compare(a: &[f64], b: &[f64], p_threshold: f64) -> Comparison {
    let Ok(w) = welch_t_test(a, b) else {
        return Comparison::Tie;
    };
    if w.p >= p_threshold {
        return Comparison::Tie;
    }
    match mean(a).partial_cmp(&mean(b)) {
        Some(std::cmp::Ordering::Greater) => Comparison::Win,
        Some(std::cmp::Ordering::Less) => Comparison::Loss,
        _ => Comparison::Tie,
    }
}

/// A dataset for comparison purposes: one dataset under one setting.
pub type DatasetKey = (String, Setting);

/// `dataset → method → accuracies`, over the given methods only.
pub fn group_accuracies(runs: &[MethodRun], methods: &[String]) -> BTreeMap<DatasetKey, BTreeMap<String, Vec<f64>>> {
    let wanted: BTreeSet<&str> = methods.iter().map(String::as_str).collect();
    let mut out: BTreeMap<DatasetKey, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    for r in runs.iter().filter(|r| wanted.contains(r.method.as_str())) {
        out.entry((r.dataset_id.clone(), r.setting))
            .or_default()
            .entry(r.method.clone())
            .or_default()
            .push(r.test_accuracy);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WinMatrix {
    pub methods: Vec<String>,
    /// `wins[i][j]`: datasets where method i significantly beats method j.
    pub wins: Vec<Vec<usize>>,
    pub losses: Vec<Vec<usize>>,
}

impl WinMatrix {
    /// `wins / (wins + losses)`; `None` on the diagonal or without any
    /// significant comparison.
    pub fn ratio(&self, i: usize, j: usize) -> Option<f64> {
        let total = self.wins[i][j] + self.losses[i][j];
        (i != j && total > 0).then(|| self.wins[i][j] as f64 / total as f64)
    }

    pub fn cell_label(&self, i: usize, j: usize) -> String {
        if i == j {
            String::new()
        } else {
            format!("{}/{}", self.wins[i][j], self.wins[i][j] + self.losses[i][j])
        }
    }

    /// Smallest defined ratio in row `i`.
    pub fn min_ratio(&self, i: usize) -> Option<f64> {
        (0..self.methods.len())
            .filter_map(|j| self.ratio(i, j))
            .fold(None, |m: Option<f64>, r| Some(m.map_or(r, |m| m.min(r))))
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("method");
        for m in &self.methods {
            out.push(',');
            out.push_str(&csv_field(m));
        }
        out.push_str(",min_ratio\n");
        for (i, m) in self.methods.iter().enumerate() {
            out.push_str(&csv_field(m));
            for j in 0..self.methods.len() {
                out.push(',');
                out.push_str(&self.cell_label(i, j));
            }
            out.push(',');
            if let Some(r) = self.min_ratio(i) {
                out.push_str(&format!("{r:.4}"));
            }
            out.push('\n');
        }
        out
    }
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Pairwise significant wins and losses over every dataset on which both
/// methods have runs.
pub fn win_matrix(runs: &[MethodRun], methods: &[String], p_threshold: f64) -> WinMatrix {
    let k = methods.len();
    let mut wins = vec![vec![0; k]; k];
    let mut losses = vec![vec![0; k]; k];
    for per_method in group_accuracies(runs, methods).values() {
        for i in 0..k {
            for j in 0..k {
                if i == j {
                    continue;
                }
                let (Some(a), Some(b)) = (per_method.get(&methods[i]), per_method.get(&methods[j])) else {
                    continue;
                };
                match compare(a, b, p_threshold) {
                    Comparison::Win => wins[i][j] += 1,
                    Comparison::Loss => losses[i][j] += 1,
                    Comparison::Tie => {}
                }
            }
        }
    }
    WinMatrix {
        methods: methods.to_vec(),
        wins,
        losses,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxPlotEntry {
    pub method: String,
    pub reference: String,
    pub dataset_id: String,
    pub setting: Setting,
    pub relative_improvement: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SkippedDataset {
    pub dataset_id: String,
    pub setting: Setting,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct RelativeImprovement {
    pub entries: Vec<BoxPlotEntry>,
    pub skipped: Vec<SkippedDataset>,
}

impl RelativeImprovement {
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("method,reference,dataset_id,setting,relative_improvement\n");
        for e in &self.entries {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                csv_field(&e.method),
                csv_field(&e.reference),
                csv_field(&e.dataset_id),
                e.setting,
                e.relative_improvement
            ));
        }
        out
    }
}

/// `100 · (m - r) / r` of the mean accuracies.
pub fn percent_improvement(method_mean: f64, reference_mean: f64) -> f64 {
    100.0 * (method_mean - reference_mean) / reference_mean
}

/// Percent improvement of `method` over `reference` on each dataset whose
/// means differ at `p < p_threshold`.
pub fn relative_improvement(runs: &[MethodRun], method: &str, reference: &str, p_threshold: f64) -> RelativeImprovement {
    let names = [method.to_string(), reference.to_string()];
    let mut out = RelativeImprovement::default();
    for ((dataset_id, setting), per_method) in group_accuracies(runs, &names) {
        let (Some(m), Some(r)) = (per_method.get(method), per_method.get(reference)) else {
            continue;
        };
        let skip = |reason: String| SkippedDataset {
            dataset_id: dataset_id.clone(),
            setting,
            reason,
        };
        let ref_mean = mean(r);
        if ref_mean == 0.0 {
            out.skipped.push(skip("reference accuracy is 0".into()));
            continue;
        }
        if compare(m, r, p_threshold) == Comparison::Tie {
            continue;
        }
        out.entries.push(BoxPlotEntry {
            method: method.to_string(),
            reference: reference.to_string(),
            dataset_id,
            setting,
            relative_improvement: percent_improvement(mean(m), ref_mean),
        });
    }
    out
}
