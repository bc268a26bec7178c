//! Excitation-number and detected-number distributions.
//!
//! Weak excitation gives a Poisson law for the number of Rydberg atoms per
//! pulse, strong excitation a binomial law over the `N₀` ground-state atoms.
//! A detector of efficiency `T` thins either law: Poisson(n̄) becomes
//! Poisson(n̄T) and Binomial(N₀, p) becomes Binomial(N₀, pT).

use rand::Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_factorial;

use crate::error::{domain, Result};

/// Cumulative tail mass tolerated when truncating an infinite Poisson sum.
pub const POISSON_TAIL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Weak,
    Strong,
}

/// Statistics of the number of atoms excited by one laser pulse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExcitationModel {
    regime: Regime,
    ground_atoms: u64,
    probability: f64,
    mean: f64,
}

impl ExcitationModel {
    /// Poisson excitation with mean `mean`. `ground_atoms` is only bookkeeping
    /// here and may be any value ≥ 1.
    pub fn weak(mean: f64, ground_atoms: u64) -> Result<Self> {
        if !(mean.is_finite() && mean >= 0.0) {
            return Err(domain(format!("mean excited number must be >= 0, got {mean}")));
        }
        if ground_atoms < 1 {
            return Err(domain("ground-state atom number must be >= 1"));
        }
        Ok(Self {
            regime: Regime::Weak,
            ground_atoms,
            probability: mean / ground_atoms as f64,
            mean,
        })
    }

    /// Binomial excitation of `ground_atoms` atoms, each with probability `p`.
    pub fn strong(ground_atoms: u64, p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(domain(format!("excitation probability must lie in [0, 1], got {p}")));
        }
        if ground_atoms < 1 {
            return Err(domain("ground-state atom number must be >= 1"));
        }
        Ok(Self {
            regime: Regime::Strong,
            ground_atoms,
            probability: p,
            mean: p * ground_atoms as f64,
        })
    }

    /// Strong regime specified through its mean, `p = n̄ / N₀`.
    pub fn strong_with_mean(ground_atoms: u64, mean: f64) -> Result<Self> {
        if ground_atoms < 1 {
            return Err(domain("ground-state atom number must be >= 1"));
        }
        Self::strong(ground_atoms, mean / ground_atoms as f64)
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    pub fn ground_atoms(&self) -> u64 {
        self.ground_atoms
    }

    pub fn probability(&self) -> f64 {
        self.probability
    }

    /// Mean number of excited atoms n̄.
    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// P_N, the probability that exactly `n` atoms are excited.
    pub fn pmf(&self, n: u64) -> f64 {
        match self.regime {
            Regime::Weak => poisson_pmf(self.mean, n),
            Regime::Strong => binomial_pmf(self.ground_atoms, n, self.probability),
        }
    }

    /// Largest excited count that carries non-negligible weight.
    pub fn support_max(&self) -> u64 {
        match self.regime {
            Regime::Weak => poisson_truncation(self.mean, POISSON_TAIL),
            Regime::Strong => self.ground_atoms,
        }
    }
}

/// Detector efficiency `T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionModel {
    efficiency: f64,
}

impl DetectionModel {
    pub fn new(efficiency: f64) -> Result<Self> {
        if !(efficiency > 0.0 && efficiency <= 1.0) {
            return Err(domain(format!("detection efficiency must lie in (0, 1], got {efficiency}")));
        }
        Ok(Self { efficiency })
    }

    pub fn ideal() -> Self {
        Self { efficiency: 1.0 }
    }

    pub fn efficiency(&self) -> f64 {
        self.efficiency
    }

    /// Mean detected atoms per pulse, β = n̄T.
    pub fn beta(&self, excitation: &ExcitationModel) -> f64 {
        excitation.mean() * self.efficiency
    }
}

pub fn excitation_pmf(model: &ExcitationModel, n: u64) -> f64 {
    model.pmf(n)
}

/// P̄_N, the probability of detecting exactly `n` atoms in one pulse.
pub fn detected_pmf(model: &ExcitationModel, det: &DetectionModel, n: u64) -> f64 {
    let t = det.efficiency();
    match model.regime() {
        Regime::Weak => poisson_pmf(model.mean() * t, n),
        Regime::Strong => binomial_pmf(model.ground_atoms(), n, model.probability() * t),
    }
}

/// ln C(n, k), computed through log-factorials so that n ~ 10⁴ does not overflow.
pub fn ln_binomial(n: u64, k: u64) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

/// x·ln(y) with the convention 0·ln(0) = 0.
pub(crate) fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

pub fn poisson_pmf(lambda: f64, k: u64) -> f64 {
    if lambda == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    let kf = k as f64;
    (kf * lambda.ln() - lambda - ln_factorial(k)).exp()
}

pub fn binomial_pmf(n: u64, k: u64, p: f64) -> f64 {
    if k > n {
        return 0.0;
    }
    let ln = ln_binomial(n, k) + xlogy(k as f64, p) + xlogy((n - k) as f64, 1.0 - p);
    ln.exp()
}

/// Smallest `k_max` whose Poisson(λ) upper tail P(X > k_max) is below `tail`,
/// found by scanning the Chernoff bound P(X ≥ k) ≤ e^{−λ} (eλ/k)^k.
pub fn poisson_truncation(lambda: f64, tail: f64) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    let ln_tail = tail.ln();
    let mut k = lambda.ceil().max(1.0) as u64;
    loop {
        let kf = (k + 1) as f64;
        let bound = -lambda + kf * (1.0 + lambda.ln() - kf.ln());
        if bound < ln_tail {
            return k;
        }
        k += 1;
    }
}

/// Draws the number of atoms excited in one pulse.
pub fn sample_excited_count<R: Rng + ?Sized>(model: &ExcitationModel, rng: &mut R) -> u64 {
    match model.regime() {
        Regime::Weak => {
            if model.mean() == 0.0 {
                0
            } else {
                // `new` only fails for non-positive or non-finite rates, excluded above
                Poisson::new(model.mean()).expect("positive rate").sample(rng) as u64
            }
        }
        Regime::Strong => Binomial::new(model.ground_atoms(), model.probability())
            .expect("probability in [0, 1]")
            .sample(rng),
    }
}

/// Binomial thinning: each of `excited` atoms is kept with probability `efficiency`.
pub fn thin_count<R: Rng + ?Sized>(excited: u64, efficiency: f64, rng: &mut R) -> u64 {
    if excited == 0 || efficiency <= 0.0 {
        return 0;
    }
    if efficiency >= 1.0 {
        return excited;
    }
    Binomial::new(excited, efficiency)
        .expect("efficiency in (0, 1)")
        .sample(rng)
}
