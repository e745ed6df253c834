//! Binomial probabilities in log space, with cached prefix and suffix sums.

use crate::scalar::{CompensatedSum, Real};

use super::AnalyticsError;

/// `ln(k!)` for `k = 0..=n`.
fn ln_factorials<T: Real>(n: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(n + 1);
    let mut acc = CompensatedSum::new();
    out.push(T::zero());
    for i in 1..=n {
        acc.add(T::of_usize(i).ln());
        out.push(acc.value());
    }
    out
}

fn check_prob<T: Real>(a: T) -> Result<(), AnalyticsError> {
    if a >= T::zero() && a <= T::one() {
        Ok(())
    } else {
        Err(AnalyticsError::Probability(a.as_f64()))
    }
}

fn pmf_from_table<T: Real>(k: usize, n: usize, a: T, lnf: &[T]) -> T {
    if a == T::zero() {
        return if k == 0 { T::one() } else { T::zero() };
    }
    if a == T::one() {
        return if k == n { T::one() } else { T::zero() };
    }
    let ln_choose = lnf[n] - lnf[k] - lnf[n - k];
    let kt = T::of_usize(k);
    let rest = T::of_usize(n - k);
    (ln_choose + kt * a.ln() + rest * (-a).ln_1p()).exp()
}

/// `C(n, k) · aᵏ · (1 − a)ⁿ⁻ᵏ`.
pub fn binom_pmf<T: Real>(k: usize, n: usize, a: T) -> Result<T, AnalyticsError> {
    if k > n {
        return Err(AnalyticsError::Index { k, n });
    }
    check_prob(a)?;
    Ok(pmf_from_table(k, n, a, &ln_factorials::<T>(n)))
}

/// Full distribution of `Bin(n, a)` with cumulative sums.
#[derive(Debug, Clone, PartialEq)]
pub struct BinomialTable<T> {
    pub n: usize,
    pmf: Vec<T>,
    /// `cdf[k] = Pr(X ≤ k)`.
    cdf: Vec<T>,
    /// `sf[k] = Pr(X ≥ k)`, with `sf[n + 1] = 0`.
    sf: Vec<T>,
}

impl<T: Real> BinomialTable<T> {
    pub fn new(n: usize, a: T) -> Result<Self, AnalyticsError> {
        check_prob(a)?;
        let lnf = ln_factorials::<T>(n);
        Ok(Self::with_factorials(n, a, &lnf))
    }

    fn with_factorials(n: usize, a: T, lnf: &[T]) -> Self {
        let pmf: Vec<T> = (0..=n).map(|k| pmf_from_table(k, n, a, lnf)).collect();
        let mut cdf = Vec::with_capacity(n + 1);
        let mut acc = CompensatedSum::new();
        for &p in &pmf {
            acc.add(p);
            cdf.push(acc.value().min(T::one()));
        }
        let mut sf = vec![T::zero(); n + 2];
        let mut acc = CompensatedSum::new();
        for k in (0..=n).rev() {
            acc.add(pmf[k]);
            sf[k] = acc.value().min(T::one());
        }
        Self { n, pmf, cdf, sf }
    }

    /// Tables for every `n` in `0..=max_n`, sharing one factorial table.
    pub fn family(max_n: usize, a: T) -> Result<Vec<Self>, AnalyticsError> {
        check_prob(a)?;
        let lnf = ln_factorials::<T>(max_n);
        Ok((0..=max_n).map(|n| Self::with_factorials(n, a, &lnf)).collect())
    }

    pub fn pmf(&self, k: usize) -> T {
        self.pmf.get(k).copied().unwrap_or_else(T::zero)
    }

    pub fn pmfs(&self) -> &[T] {
        &self.pmf
    }

    /// `Pr(X ≤ k)`; negative `k` gives 0.
    pub fn cdf(&self, k: i64) -> T {
        if k < 0 {
            T::zero()
        } else if k as usize >= self.n {
            T::one()
        } else {
            self.cdf[k as usize]
        }
    }

    /// `Pr(X ≥ k)`; `k` above `n` gives 0.
    pub fn sf(&self, k: i64) -> T {
        if k <= 0 {
            T::one()
        } else if k as usize > self.n {
            T::zero()
        } else {
            self.sf[k as usize]
        }
    }

    /// `E[min(X, cap)]`.
    pub fn expected_min(&self, cap: usize) -> T {
        let mut acc = CompensatedSum::new();
        for (i, &p) in self.pmf.iter().enumerate().take(cap) {
            acc.add(T::of_usize(i) * p);
        }
        acc.add(T::of_usize(cap) * self.sf(cap as i64));
        acc.value()
    }
}
