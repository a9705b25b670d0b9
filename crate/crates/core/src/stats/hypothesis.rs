use serde::{Deserialize, Serialize};

use super::special::{chi_square_sf, student_t_two_sided};
use super::{Result, StatsError};
use crate::numeric::{mean, sample_variance};

/// Outcome of one hypothesis test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
    /// Degrees of freedom where the test has them.
    pub df: Option<f64>,
    /// Bonferroni-corrected p-value, when a correction has been applied.
    pub corrected_p: Option<f64>,
    /// Number of tests the correction accounted for.
    pub m: Option<usize>,
}

impl TestResult {
    fn new(statistic: f64, p_value: f64, n: usize, df: Option<f64>) -> Self {
        Self {
            statistic,
            p_value: p_value.clamp(0.0, 1.0),
            n,
            df,
            corrected_p: None,
            m: None,
        }
    }

    pub fn with_bonferroni(mut self, m: usize) -> Self {
        self.corrected_p = Some(bonferroni_one(self.p_value, m));
        self.m = Some(m);
        self
    }

    /// Corrected p-value if present, otherwise the raw one.
    pub fn effective_p(&self) -> f64 {
        self.corrected_p.unwrap_or(self.p_value)
    }
}

/// Fractional ranks (1-based), ties sharing their average rank.
pub fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Pearson correlation; `None` when either side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let mx = mean(x);
    let my = mean(y);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

fn correlation_p(r: f64, n: usize) -> (f64, f64) {
    let df = (n - 2) as f64;
    if r.abs() >= 1.0 {
        return (f64::INFINITY.copysign(r), 0.0);
    }
    let t = r * (df / (1.0 - r * r)).sqrt();
    (t, student_t_two_sided(t, df))
}

fn check_pair(x: &[f64], y: &[f64], min: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < min {
        return Err(StatsError::InsufficientData(format!(
            "need at least {min} observations, got {}",
            x.len()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SpearmanP {
    /// Student-t approximation `t = r sqrt((n-2)/(1-r^2))`.
    #[default]
    TApprox,
    /// Exact two-sided permutation p-value (n <= 9).
    Exact,
}

/// Spearman rank correlation with a t-approximation p-value.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<TestResult> {
    spearman_with(x, y, SpearmanP::TApprox)
}

pub fn spearman_with(x: &[f64], y: &[f64], p_mode: SpearmanP) -> Result<TestResult> {
    check_pair(x, y, 3)?;
    let rx = ranks(x);
    let ry = ranks(y);
    let r = pearson(&rx, &ry).ok_or(StatsError::DegenerateRanking)?;
    let n = x.len();
    let (_, p) = correlation_p(r, n);
    let p = match p_mode {
        SpearmanP::TApprox => p,
        SpearmanP::Exact => exact_spearman_p(&rx, &ry, r)?,
    };
    Ok(TestResult::new(r, p, n, Some((n - 2) as f64)))
}

fn exact_spearman_p(rx: &[f64], ry: &[f64], r_obs: f64) -> Result<f64> {
    let n = rx.len();
    if n > 9 {
        return Err(StatsError::InsufficientData(format!(
            "exact permutation p limited to n <= 9, got {n}"
        )));
    }
    let mut perm = ry.to_vec();
    let mut hits = 0usize;
    let mut total = 0usize;
    let target = r_obs.abs() - 1e-12;
    permute(&mut perm, 0, &mut |p| {
        total += 1;
        if pearson(rx, p).map_or(false, |r| r.abs() >= target) {
            hits += 1;
        }
    });
    Ok(hits as f64 / total as f64)
}

fn permute(v: &mut [f64], k: usize, visit: &mut dyn FnMut(&[f64])) {
    if k == v.len() {
        visit(v);
        return;
    }
    for i in k..v.len() {
        v.swap(k, i);
        permute(v, k + 1, visit);
        v.swap(k, i);
    }
}

/// Point-biserial correlation: Pearson with the flags coded 0/1.
pub fn point_biserial(flags: &[bool], y: &[f64]) -> Result<TestResult> {
    if flags.len() != y.len() {
        return Err(StatsError::LengthMismatch(flags.len(), y.len()));
    }
    let ones = flags.iter().filter(|&&f| f).count();
    if ones == 0 || ones == flags.len() {
        return Err(StatsError::DegenerateGroups);
    }
    if flags.len() < 3 {
        return Err(StatsError::InsufficientData(
            "need at least 3 observations".into(),
        ));
    }
    let x: Vec<f64> = flags.iter().map(|&f| if f { 1.0 } else { 0.0 }).collect();
    let r = pearson(&x, y).ok_or(StatsError::DegenerateRanking)?;
    let (_, p) = correlation_p(r, y.len());
    Ok(TestResult::new(r, p, y.len(), Some((y.len() - 2) as f64)))
}

/// Chi-square goodness of fit with `k - 1` degrees of freedom.
pub fn chi_square_gof(observed: &[f64], expected: &[f64]) -> Result<TestResult> {
    if observed.len() != expected.len() {
        return Err(StatsError::LengthMismatch(observed.len(), expected.len()));
    }
    if observed.len() < 2 {
        return Err(StatsError::InsufficientData(
            "need at least two categories".into(),
        ));
    }
    if expected.iter().any(|&e| !(e > 0.0)) {
        return Err(StatsError::InvalidExpected);
    }
    let stat: f64 = observed
        .iter()
        .zip(expected)
        .map(|(o, e)| (o - e) * (o - e) / e)
        .sum();
    let dof = (observed.len() - 1) as f64;
    let n = observed.iter().sum::<f64>().round() as usize;
    Ok(TestResult::new(
        stat,
        chi_square_sf(stat, dof),
        n,
        Some(dof),
    ))
}

/// Welch's two-sample t-test (unequal variances), two-sided.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<TestResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(StatsError::InsufficientData(format!(
            "each group needs at least 2 values, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (ma, mb) = (mean(a), mean(b));
    let (va, vb) = (
        sample_variance(a) / a.len() as f64,
        sample_variance(b) / b.len() as f64,
    );
    let n = a.len() + b.len();
    let se2 = va + vb;
    if se2 == 0.0 {
        return Ok(if ma == mb {
            TestResult::new(0.0, 1.0, n, None)
        } else {
            TestResult::new(f64::INFINITY.copysign(ma - mb), 0.0, n, None)
        });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (va * va / (a.len() - 1) as f64 + vb * vb / (b.len() - 1) as f64);
    Ok(TestResult::new(t, student_t_two_sided(t, df), n, Some(df)))
}

/// Paired t-test on `a[i] - b[i]`, two-sided.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TestResult> {
    check_pair(a, b, 2)?;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let md = mean(&d);
    let se = (sample_variance(&d) / d.len() as f64).sqrt();
    let df = (d.len() - 1) as f64;
    if se == 0.0 {
        return Ok(if md == 0.0 {
            TestResult::new(0.0, 1.0, d.len(), Some(df))
        } else {
            TestResult::new(f64::INFINITY.copysign(md), 0.0, d.len(), Some(df))
        });
    }
    let t = md / se;
    Ok(TestResult::new(
        t,
        student_t_two_sided(t, df),
        d.len(),
        Some(df),
    ))
}

fn bonferroni_one(p: f64, m: usize) -> f64 {
    (p * m as f64).min(1.0)
}

/// `min(1, m p)` for each p.
pub fn bonferroni(p: &[f64], m: usize) -> Result<Vec<f64>> {
    if m < p.len() {
        return Err(StatsError::InsufficientData(format!(
            "m = {m} is smaller than the {} tests being corrected",
            p.len()
        )));
    }
    Ok(p.iter().map(|&x| bonferroni_one(x, m)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn spearman_examples() {
        assert_eq!(
            spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0])
                .unwrap()
                .statistic,
            1.0
        );
        assert_eq!(
            spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0])
                .unwrap()
                .statistic,
            -1.0
        );
        let r = spearman(&[1.0, 2.0, 3.0, 4.0, 5.0], &[1.0, 3.0, 2.0, 5.0, 4.0]).unwrap();
        // hand ranks: d^2 = 0+1+1+1+1, r = 1 - 6*4/(5*24)
        assert_eq!(r.statistic, 0.8);
        assert_eq!(r.statistic, 1.0 - 6.0 * 4.0 / (5.0 * 24.0));
    }

    #[test]
    fn spearman_degenerate() {
        assert_eq!(
            spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(StatsError::DegenerateRanking)
        );
        assert!(spearman(&[1.0, 2.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn spearman_exact_p() {
        // perfect ranking of 5: only the identity and the reversal reach |r| = 1
        let r = spearman_with(
            &[1.0, 2.0, 3.0, 4.0, 5.0],
            &[2.0, 4.0, 6.0, 8.0, 10.0],
            SpearmanP::Exact,
        )
        .unwrap();
        assert!((r.p_value - 2.0 / 120.0).abs() < 1e-12);
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn point_biserial_examples() {
        let r = point_biserial(&[false, false, true, true], &[1.0, 1.0, 2.0, 2.0]).unwrap();
        assert_eq!(r.statistic, 1.0);
        assert!(point_biserial(&[false, true, false, true], &[5.0; 4]).is_err());
        let r = point_biserial(&[false, false, true, true], &[1.0, 2.0, 1.0, 2.0]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(
            point_biserial(&[true, true, true], &[1.0, 2.0, 3.0]),
            Err(StatsError::DegenerateGroups)
        );
    }

    #[test]
    fn chi_square_examples() {
        let r = chi_square_gof(&[30.0, 10.0], &[20.0, 20.0]).unwrap();
        assert_eq!(r.statistic, 10.0);
        assert!((r.p_value - 0.00157).abs() < 1e-5);
        let r = chi_square_gof(&[20.0, 20.0], &[20.0, 20.0]).unwrap();
        assert_eq!((r.statistic, r.p_value), (0.0, 1.0));
        assert_eq!(
            chi_square_gof(&[1.0, 2.0], &[0.0, 3.0]),
            Err(StatsError::InvalidExpected)
        );
    }

    #[test]
    fn welch_examples() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let r = welch_t_test(&a, &a).unwrap();
        assert_eq!((r.statistic, r.p_value), (0.0, 1.0));

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n0 = Normal::new(0.0, 1.0).unwrap();
        let n5 = Normal::new(5.0, 1.0).unwrap();
        let xs: Vec<f64> = (0..1000).map(|_| n0.sample(&mut rng)).collect();
        let ys: Vec<f64> = (0..1000).map(|_| n5.sample(&mut rng)).collect();
        let r = welch_t_test(&xs, &ys).unwrap();
        assert!(r.p_value < 1e-10);
        let s = welch_t_test(&ys, &xs).unwrap();
        assert_eq!(s.statistic, -r.statistic);
        assert_eq!(s.p_value, r.p_value);
    }

    #[test]
    fn welch_zero_variance() {
        let r = welch_t_test(&[2.0, 2.0], &[2.0, 2.0, 2.0]).unwrap();
        assert_eq!((r.statistic, r.p_value), (0.0, 1.0));
        let r = welch_t_test(&[2.0, 2.0], &[3.0, 3.0]).unwrap();
        assert_eq!(r.p_value, 0.0);
    }

    #[test]
    fn paired_matches_hand_computation() {
        // differences 1, 2, 3: mean 2, sd 1, t = 2 / (1/sqrt 3)
        let r = paired_t_test(&[2.0, 4.0, 6.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!((r.statistic - 2.0 * 3f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn bonferroni_examples() {
        assert!((bonferroni(&[0.01], 14).unwrap()[0] - 0.14).abs() < 1e-15);
        assert_eq!(bonferroni(&[0.2], 14).unwrap()[0], 1.0);
        assert_eq!(bonferroni(&[0.003], 1).unwrap()[0], 0.003);
        assert!(bonferroni(&[0.1, 0.2], 1).is_err());
    }

    proptest! {
        #[test]
        fn spearman_monotone_invariance(pairs in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 3..40)) {
            let x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            if let Ok(r) = spearman(&x, &y) {
                prop_assert!((-1.0..=1.0).contains(&r.statistic));
                prop_assert!((0.0..=1.0).contains(&r.p_value));
                let tx: Vec<f64> = x.iter().map(|v| (v / 50.0).exp()).collect();
                let ty: Vec<f64> = y.iter().map(|v| v * v * v).collect();
                let r2 = spearman(&tx, &ty).unwrap();
                prop_assert!((r.statistic - r2.statistic).abs() < 1e-12);
            }
        }

        #[test]
        fn chi_square_nonnegative(obs in prop::collection::vec(0.0f64..50.0, 2..6), scale in 0.5f64..2.0) {
            let exp: Vec<f64> = obs.iter().map(|o| o * scale + 1.0).collect();
            let r = chi_square_gof(&obs, &exp).unwrap();
            prop_assert!(r.statistic >= 0.0);
            let same = chi_square_gof(&exp, &exp).unwrap();
            prop_assert_eq!(same.statistic, 0.0);
            prop_assert!((0.0..=1.0).contains(&r.p_value));
        }
    }
}
