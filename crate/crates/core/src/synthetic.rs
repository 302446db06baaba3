//! Synthetic credit-default data with a planted gender proxy.
//!
//! Columns loosely follow the public credit-card default data: a credit
//! limit, repayment status and amounts, age, and categorical education and
//! marital status. `SPEND_PROFILE` mixes a large gender offset with a
//! spending habit that affects default and appears in no other column. The
//! habit makes the column useful to an unconstrained model, which then also
//! picks up the gender offset. By default gender has no direct effect on
//! the label.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{dataset_from_raw, CsvOptions, RawTable, TabularDataset};
use crate::error::Result;
use crate::models::sigmoid;

pub const LABEL_COL: &str = "default";
pub const SENSITIVE_COL: &str = "SEX";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub n_rows: usize,
    pub seed: u64,
    pub male_fraction: f64,
    /// Log-odds added for men (subtracted for women).
    pub gender_bias: f64,
    /// Gender offset of the proxy column, in noise units.
    pub proxy_strength: f64,
    /// Log-odds per unit of the spending habit.
    pub habit_effect: f64,
    pub intercept: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_rows: 5000,
            seed: 7,
            male_fraction: 0.25,
            gender_bias: 0.0,
            proxy_strength: 1.5,
            habit_effect: 1.5,
            intercept: -0.4,
        }
    }
}

const EDUCATION: [&str; 4] = ["graduate", "university", "high_school", "other"];

/// Generates the table, including the id-free header row.
pub fn credit_like(spec: &SyntheticSpec) -> RawTable {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let headers = [
        "LIMIT_BAL",
        SENSITIVE_COL,
        "EDUCATION",
        "MARRIAGE",
        "AGE",
        "PAY_0",
        "PAY_2",
        "BILL_AMT1",
        "PAY_AMT1",
        "SPEND_PROFILE",
        LABEL_COL,
    ]
    .map(String::from)
    .to_vec();
    let mut records = Vec::with_capacity(spec.n_rows);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    for _ in 0..spec.n_rows {
        let male = rng.random_bool(spec.male_fraction.clamp(0.0, 1.0));
        let s = if male { 1.0 } else { -1.0 };
        let wealth: f64 = StandardNormal.sample(&mut rng);
        let risk: f64 = StandardNormal.sample(&mut rng);
        let habit: f64 = StandardNormal.sample(&mut rng);
        let age = rng.random_range(21..70) as f64;
        let edu = (rng.random_range(0.0..1.0f64) + 0.15 * wealth).clamp(0.0, 0.999);
        let education = EDUCATION[(edu * 4.0) as usize];
        let married = rng.random_bool(if age > 35.0 { 0.65 } else { 0.3 });
        let limit = (50_000.0 * (0.6 * wealth + 0.02 * (age - 40.0)).exp()).round();
        let pay0 = (risk + 0.5 * noise.sample(&mut rng)).round().clamp(-2.0, 6.0);
        let pay2 = (0.7 * risk + 0.7 * noise.sample(&mut rng)).round().clamp(-2.0, 6.0);
        let bill = (limit * (0.4 + 0.15 * risk + 0.1 * noise.sample(&mut rng)).clamp(0.0, 1.2)).round();
        let pay_amt = (bill * (0.15 - 0.05 * risk + 0.03 * noise.sample(&mut rng)).clamp(0.0, 1.0)).round();
        let proxy = spec.proxy_strength * s + habit + 0.5 * noise.sample(&mut rng);

        let logit = spec.intercept + 1.1 * pay0 + 0.5 * pay2 - 0.5 * wealth
            + 0.3 * (bill / limit.max(1.0) - 0.4) * 5.0
            + if married { -0.2 } else { 0.1 }
            + spec.habit_effect * habit
            + spec.gender_bias * s;
        let y = rng.random_bool(sigmoid(logit));

        records.push(vec![
            format!("{limit}"),
            if male { "M" } else { "F" }.to_string(),
            education.to_string(),
            if married { "married" } else { "single" }.to_string(),
            format!("{age}"),
            format!("{pay0}"),
            format!("{pay2}"),
            format!("{bill}"),
            format!("{pay_amt}"),
            format!("{proxy:.6}"),
            (y as u8).to_string(),
        ]);
    }
    RawTable { headers, records }
}

/// The generated table loaded as an unsplit dataset.
pub fn credit_like_dataset(spec: &SyntheticSpec) -> Result<TabularDataset> {
    dataset_from_raw(&credit_like(spec), &CsvOptions::new(LABEL_COL, Some(SENSITIVE_COL)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_loadable() {
        let spec = SyntheticSpec { n_rows: 300, ..SyntheticSpec::default() };
        assert_eq!(credit_like(&spec), credit_like(&spec));
        let ds = credit_like_dataset(&spec).unwrap();
        assert_eq!(ds.n_rows(), 300);
        assert!(!ds.feature_names().iter().any(|n| n == SENSITIVE_COL));
        let rate = ds.labels().iter().map(|&y| y as f64).sum::<f64>() / 300.0;
        assert!(rate > 0.15 && rate < 0.85, "default rate {rate}");
    }

    #[test]
    fn proxy_tracks_gender() {
        let spec = SyntheticSpec { n_rows: 4000, ..SyntheticSpec::default() };
        let t = credit_like(&spec);
        let (si, pi) = (t.column(SENSITIVE_COL).unwrap(), t.column("SPEND_PROFILE").unwrap());
        let mut sums = [0.0, 0.0];
        let mut counts = [0usize, 0];
        let mut agree = 0;
        for r in &t.records {
            let male = r[si] == "M";
            let v: f64 = r[pi].parse().unwrap();
            sums[male as usize] += v;
            counts[male as usize] += 1;
            agree += (male == (v > 0.0)) as usize;
        }
        // proxy ~ N(±strength, 1 + 0.25): group means differ by 2·strength
        let gap = sums[1] / counts[1] as f64 - sums[0] / counts[0] as f64;
        assert!((gap - 2.0 * spec.proxy_strength).abs() < 0.2, "gap {gap}");
        // sign agreement is Φ(1.5 / √1.25) ≈ 0.910
        let rate = agree as f64 / spec.n_rows as f64;
        assert!((rate - 0.910).abs() < 0.03, "agreement {rate}");
    }
}
