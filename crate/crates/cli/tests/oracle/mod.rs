//! Reference implementations for the acceptance suite: 128-bit arithmetic,
//! exact-rational average precision, exhaustive split search.
#![allow(dead_code)]

use astro_float::{BigFloat, Consts, RoundingMode, Sign};

pub const PREC: usize = 128;
const RM: RoundingMode = RoundingMode::ToEven;

pub struct Hp {
    cc: Consts,
}

impl Hp {
    pub fn new() -> Self {
        Self { cc: Consts::new().expect("constants cache") }
    }

    pub fn num(&self, x: f64) -> BigFloat {
        BigFloat::from_f64(x, PREC)
    }

    pub fn add(&self, a: &BigFloat, b: &BigFloat) -> BigFloat {
        a.add(b, PREC, RM)
    }

    pub fn sub(&self, a: &BigFloat, b: &BigFloat) -> BigFloat {
        a.sub(b, PREC, RM)
    }

    pub fn mul(&self, a: &BigFloat, b: &BigFloat) -> BigFloat {
        a.mul(b, PREC, RM)
    }

    pub fn div(&self, a: &BigFloat, b: &BigFloat) -> BigFloat {
        a.div(b, PREC, RM)
    }

    pub fn ln(&mut self, a: &BigFloat) -> BigFloat {
        a.ln(PREC, RM, &mut self.cc)
    }

    pub fn exp(&mut self, a: &BigFloat) -> BigFloat {
        a.exp(PREC, RM, &mut self.cc)
    }

    pub fn sum<'a>(&self, xs: impl IntoIterator<Item = &'a BigFloat>) -> BigFloat {
        xs.into_iter().fold(self.num(0.0), |acc, x| self.add(&acc, x))
    }

    pub fn kl(&mut self, p: &[f64], q: &[f64]) -> BigFloat {
        let mut acc = self.num(0.0);
        for (&pi, &qi) in p.iter().zip(q) {
            let bp = self.num(pi);
            let ratio = self.div(&bp, &self.num(qi));
            let log = self.ln(&ratio);
            acc = self.add(&acc, &self.mul(&bp, &log));
        }
        acc
    }

    pub fn js(&mut self, p: &[f64], q: &[f64]) -> BigFloat {
        let half = self.num(0.5);
        let mut acc = self.num(0.0);
        for (&pi, &qi) in p.iter().zip(q) {
            let (bp, bq) = (self.num(pi), self.num(qi));
            let m = self.mul(&self.add(&bp, &bq), &half);
            let lp = self.ln(&self.div(&bp, &m));
            let lq = self.ln(&self.div(&bq, &m));
            acc = self.add(&acc, &self.add(&self.mul(&bp, &lp), &self.mul(&bq, &lq)));
        }
        self.mul(&acc, &half)
    }

    /// `exp(h/τ) / Σ exp(h/τ)` per entry.
    pub fn softmax(&mut self, h: &[f64], tau: f64) -> Vec<f64> {
        let t = self.num(tau);
        let exps: Vec<BigFloat> = h.iter().map(|&x| self.exp(&self.div(&self.num(x), &t))).collect();
        let z = self.sum(&exps);
        exps.iter().map(|e| to_f64(&self.div(e, &z))).collect()
    }
}

pub fn to_f64(x: &BigFloat) -> f64 {
    if x.is_zero() {
        return 0.0;
    }
    let (words, _, sign, exponent, _) = x.as_raw_parts().expect("finite value");
    let n = words.len();
    let top = words[n - 1] as f64;
    let next = if n > 1 { words[n - 2] as f64 } else { 0.0 };
    let magnitude = (top + next / 2f64.powi(64)) / 2f64.powi(64) * 2f64.powi(exponent);
    if sign == Sign::Neg {
        -magnitude
    } else {
        magnitude
    }
}

/// `lcm(1, …, 12)`.
pub const LCM: u64 = 27720;

/// Step-wise average precision over every distinct threshold, as an exact
/// fraction `(numerator, denominator)`.
pub fn brute_force_ap(scores: &[f64], positives: &[u8]) -> (u64, u64) {
    let total_pos = positives.iter().filter(|&&p| p == 1).count() as u64;
    let mut thresholds = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let (mut numerator, mut prev_tp) = (0u64, 0u64);
    for t in thresholds {
        let k = scores.iter().filter(|&&s| s >= t).count() as u64;
        let tp = (0..scores.len()).filter(|&i| scores[i] >= t && positives[i] == 1).count() as u64;
        numerator += (tp - prev_tp) * tp * (LCM / k);
        prev_tp = tp;
    }
    (numerator, total_pos * LCM)
}

/// Every ordered partition of `n` into tie groups, with every positive count
/// per group; `f` receives `(size, positives)` per group, best score first.
pub fn for_each_grouping(n: usize, f: &mut impl FnMut(&[(usize, usize)])) {
    fn sizes(rest: usize, acc: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if rest == 0 {
            out.push(acc.clone());
            return;
        }
        for s in 1..=rest {
            acc.push(s);
            sizes(rest - s, acc, out);
            acc.pop();
        }
    }
    fn counts(groups: &[usize], acc: &mut Vec<(usize, usize)>, f: &mut impl FnMut(&[(usize, usize)])) {
        match groups.split_first() {
            None => f(acc),
            Some((&size, rest)) => {
                for k in 0..=size {
                    acc.push((size, k));
                    counts(rest, acc, f);
                    acc.pop();
                }
            }
        }
    }
    let mut all = Vec::new();
    sizes(n, &mut Vec::new(), &mut all);
    for groups in all {
        counts(&groups, &mut Vec::new(), f);
    }
}

pub struct Micro {
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
    pub min_samples_leaf: usize,
    pub lambda: f64,
}

/// Best depth-1 split by brute force over all thresholds between adjacent
/// distinct values, gains in 128-bit arithmetic. Ties within `1e-10`
/// relative go to the lowest feature, then the lowest threshold.
pub fn exhaustive_split(m: &Micro, hp: &Hp, min_child_hessian: f64) -> Option<(usize, f64, f64)> {
    let n = m.labels.len() as f64;
    let prevalence = m.labels.iter().sum::<f64>() / n;
    let logit = (prevalence / (1.0 - prevalence)).ln();
    let p = 1.0 / (1.0 + (-logit).exp());
    let (g, h): (Vec<f64>, Vec<f64>) = m.labels.iter().map(|&y| (p - y, p * (1.0 - p))).unzip();
    let lambda = hp.num(m.lambda);
    let score = |gs: &[f64], hs: &[f64]| {
        let gsum = hp.sum(&gs.iter().map(|&x| hp.num(x)).collect::<Vec<_>>());
        let hsum = hp.sum(&hs.iter().map(|&x| hp.num(x)).collect::<Vec<_>>());
        hp.div(&hp.mul(&gsum, &gsum), &hp.add(&hsum, &lambda))
    };
    let parent = score(&g, &h);
    let mut candidates = Vec::new();
    for f in 0..m.rows[0].len() {
        let mut values: Vec<f64> = m.rows.iter().map(|r| r[f]).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        for w in values.windows(2) {
            let left: Vec<usize> = (0..m.rows.len()).filter(|&i| m.rows[i][f] <= w[0]).collect();
            let right: Vec<usize> = (0..m.rows.len()).filter(|&i| m.rows[i][f] > w[0]).collect();
            if left.len() < m.min_samples_leaf || right.len() < m.min_samples_leaf {
                continue;
            }
            let pick = |idx: &[usize], v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
            let (hl, hr) = (pick(&left, &h), pick(&right, &h));
            if hl.iter().sum::<f64>() < min_child_hessian || hr.iter().sum::<f64>() < min_child_hessian {
                continue;
            }
            let children = hp.add(&score(&pick(&left, &g), &hl), &score(&pick(&right, &g), &hr));
            let gain = hp.mul(&hp.num(0.5), &hp.sub(&children, &parent));
            candidates.push((f, (w[0] + w[1]) * 0.5, to_f64(&gain)));
        }
    }
    let best = candidates.iter().map(|c| c.2).fold(f64::NEG_INFINITY, f64::max);
    if !(best > 0.0) {
        return None;
    }
    let floor = best - 1e-10 * best.abs().max(1.0);
    candidates.into_iter().find(|c| c.2 >= floor)
}
