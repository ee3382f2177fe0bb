//! High-precision reference arithmetic shared by the oracle tests.
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

    /// Directed KL `Σ p ln(p/q)` of the given (exactly represented) rows.
    pub fn kl(&mut self, p: &[f64], q: &[f64]) -> BigFloat {
        let mut acc = self.num(0.0);
        for (&pi, &qi) in p.iter().zip(q) {
            let (bp, bq) = (self.num(pi), self.num(qi));
            let ratio = self.div(&bp, &bq);
            let log = self.ln(&ratio);
            let term = self.mul(&bp, &log);
            acc = self.add(&acc, &term);
        }
        acc
    }

    /// `½ KL(p‖m) + ½ KL(q‖m)` with `m = (p + q) / 2` kept at full precision.
    pub fn js(&mut self, p: &[f64], q: &[f64]) -> BigFloat {
        let half = self.num(0.5);
        let mut acc = self.num(0.0);
        for (&pi, &qi) in p.iter().zip(q) {
            let (bp, bq) = (self.num(pi), self.num(qi));
            let m = self.mul(&self.add(&bp, &bq), &half);
            let (rp, rq) = (self.div(&bp, &m), self.div(&bq, &m));
            let lp = self.ln(&rp);
            let lq = self.ln(&rq);
            let term = self.add(&self.mul(&bp, &lp), &self.mul(&bq, &lq));
            acc = self.add(&acc, &term);
        }
        self.mul(&acc, &half)
    }
}

/// Nearest `f64` (to within a couple of ulps) of a high-precision value.
pub fn to_f64(x: &BigFloat) -> f64 {
    if x.is_zero() {
        return 0.0;
    }
    let (words, _, sign, exponent, _) = x.as_raw_parts().expect("finite value");
    let n = words.len();
    let top = words[n - 1] as f64;
    let next = if n > 1 { words[n - 2] as f64 } else { 0.0 };
    let frac = (top + next / 2f64.powi(64)) / 2f64.powi(64);
    let magnitude = frac * 2f64.powi(exponent);
    if sign == Sign::Neg {
        -magnitude
    } else {
        magnitude
    }
}

#[test]
fn conversion_round_trips() {
    let hp = Hp::new();
    for x in [3.0, -0.1, 1e-20, 12345.678, std::f64::consts::LN_2] {
        assert_eq!(to_f64(&hp.num(x)), x);
    }
}
