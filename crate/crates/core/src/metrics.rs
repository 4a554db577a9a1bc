//! Plasticity diagnostics: dormant hidden units and weight-distribution drift.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndmath::{Matrix, Mlp};

/// Floor on fitted standard deviations.
pub const KL_STD_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DormantSpec {
    pub tau_d: f64,
    pub probe_batch_size: usize,
}

impl Default for DormantSpec {
    fn default() -> Self {
        Self {
            tau_d: 0.025,
            probe_batch_size: 256,
        }
    }
}

impl DormantSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_d >= 0.0 && self.tau_d.is_finite()) {
            return Err(Error::InvalidConfig("tau_d must be >= 0".into()));
        }
        if self.probe_batch_size == 0 {
            return Err(Error::InvalidConfig("probe_batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Dormant and total hidden-unit counts of one network on `probe`.
///
/// Unit `j` of a hidden layer scores `mean|h_j| / mean_k mean|h_k|` and is
/// dormant when the score is at most `tau_d`. A layer whose activations are
/// all zero counts as entirely dormant.
pub fn dormant_counts(net: &Mlp, probe: &Matrix, tau_d: f64) -> Result<(usize, usize)> {
    if probe.rows() == 0 {
        return Err(Error::EmptyBuffer);
    }
    let pass = net.forward(probe)?;
    let n = probe.rows() as f64;
    let hidden = &pass.caches[..pass.caches.len() - 1];
    let (mut dormant, mut total) = (0, 0);
    for cache in hidden {
        let h = &cache.post;
        let mut means = vec![0.0; h.cols()];
        for i in 0..h.rows() {
            for (m, v) in means.iter_mut().zip(h.row(i)) {
                *m += v.abs();
            }
        }
        means.iter_mut().for_each(|m| *m /= n);
        let layer_mean = means.iter().sum::<f64>() / means.len() as f64;
        total += means.len();
        dormant += if layer_mean == 0.0 {
            means.len()
        } else {
            means.iter().filter(|&&m| m / layer_mean <= tau_d).count()
        };
    }
    Ok((dormant, total))
}

/// Fraction of dormant hidden units pooled over `nets`; 0 when they have no
/// hidden layers.
pub fn dormant_fraction(nets: &[&Mlp], probe: &Matrix, spec: &DormantSpec) -> Result<f64> {
    spec.validate()?;
    let (mut dormant, mut total) = (0, 0);
    for net in nets {
        let (d, t) = dormant_counts(net, probe, spec.tau_d)?;
        dormant += d;
        total += t;
    }
    Ok(if total == 0 {
        0.0
    } else {
        dormant as f64 / total as f64
    })
}

/// Flattened parameters of one or more networks at a training step.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSnapshot {
    pub step: u64,
    params: Vec<f64>,
}

impl WeightSnapshot {
    pub fn new(step: u64, params: Vec<f64>) -> Result<Self> {
        if params.is_empty() {
            return Err(Error::InvalidConfig("empty weight snapshot".into()));
        }
        if !params.iter().all(|p| p.is_finite()) {
            return Err(Error::NonFinite("weight snapshot".into()));
        }
        Ok(Self { step, params })
    }

    pub fn of(step: u64, nets: &[&Mlp]) -> Result<Self> {
        Self::new(step, nets.iter().flat_map(|n| n.flat_params()).collect())
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mean and (biased) standard deviation, the latter floored.
    pub fn gaussian_fit(&self) -> (f64, f64) {
        let n = self.params.len() as f64;
        let mean = self.params.iter().sum::<f64>() / n;
        let var = self.params.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt().max(KL_STD_FLOOR))
    }
}

/// `KL(N_before ‖ N_after)` between scalar Gaussian fits of the snapshots.
pub fn weight_update_kl(before: &WeightSnapshot, after: &WeightSnapshot) -> Result<f64> {
    if before.params.len() != after.params.len() {
        return Err(Error::shape(
            "weight_update_kl",
            (before.params.len(), 1),
            (after.params.len(), 1),
        ));
    }
    let (mb, sb) = before.gaussian_fit();
    let (ma, sa) = after.gaussian_fit();
    let kl = (sa / sb).ln() + (sb * sb + (mb - ma).powi(2)) / (2.0 * sa * sa) - 0.5;
    Ok(kl.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndmath::{Activation, Dense};
    use crate::nets::init_mlp;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn probe(n: usize, d: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn zero_net_is_fully_dormant() {
        let net = Mlp::new(vec![
            Dense::zeros(3, 4, Activation::Tanh).unwrap(),
            Dense::zeros(4, 1, Activation::Identity).unwrap(),
        ])
        .unwrap();
        let f = dormant_fraction(&[&net], &probe(8, 3, 0), &DormantSpec::default()).unwrap();
        assert_eq!(f, 1.0);
    }

    #[test]
    fn hand_evaluated_two_unit_layer() {
        // Hidden unit 0 is constant zero, unit 1 is constant one.
        let hidden = Dense::new(
            Matrix::from_rows(&[vec![0.0, 0.0], vec![0.0, 1.0]]),
            Activation::Identity,
        )
        .unwrap();
        let out = Dense::zeros(2, 1, Activation::Identity).unwrap();
        let net = Mlp::new(vec![hidden, out]).unwrap();
        let f = dormant_fraction(&[&net], &probe(5, 1, 1), &DormantSpec::default()).unwrap();
        assert_eq!(f, 0.5);
    }

    #[test]
    fn fresh_net_has_no_zero_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = init_mlp(&[3, 64, 64, 2], Activation::Tanh, &mut rng).unwrap();
        let spec = DormantSpec {
            tau_d: 0.0,
            ..DormantSpec::default()
        };
        assert_eq!(dormant_fraction(&[&net], &probe(256, 3, 2), &spec).unwrap(), 0.0);
    }

    #[test]
    fn nondecreasing_in_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = init_mlp(&[3, 32, 32, 1], Activation::Relu, &mut rng).unwrap();
        let p = probe(64, 3, 3);
        let mut last = 0.0;
        for k in 0..40 {
            let spec = DormantSpec {
                tau_d: k as f64 * 0.05,
                ..DormantSpec::default()
            };
            let f = dormant_fraction(&[&net], &p, &spec).unwrap();
            assert!((0.0..=1.0).contains(&f));
            assert!(f >= last);
            last = f;
        }
        assert!(last > 0.0);
    }

    #[test]
    fn dormancy_is_pure() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let net = init_mlp(&[3, 16, 1], Activation::Relu, &mut rng).unwrap();
        let p = probe(32, 3, 4);
        let a = dormant_fraction(&[&net], &p, &DormantSpec::default()).unwrap();
        let b = dormant_fraction(&[&net], &p, &DormantSpec::default()).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn empty_probe_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let net = init_mlp(&[3, 4, 1], Activation::Tanh, &mut rng).unwrap();
        assert!(dormant_fraction(&[&net], &Matrix::zeros(0, 3), &DormantSpec::default()).is_err());
    }

    fn snap(v: Vec<f64>) -> WeightSnapshot {
        WeightSnapshot::new(0, v).unwrap()
    }

    #[test]
    fn identical_snapshots_have_zero_kl() {
        let s = snap(vec![0.1, -0.4, 0.7, 0.2]);
        assert_eq!(weight_update_kl(&s, &s).unwrap(), 0.0);
    }

    #[test]
    fn doubled_spread_closed_form() {
        let before = snap(vec![-1.0, 1.0, -1.0, 1.0]);
        let after = snap(vec![-2.0, 2.0, -2.0, 2.0]);
        let kl = weight_update_kl(&before, &after).unwrap();
        assert!((kl - (2f64.ln() + 0.125 - 0.5)).abs() < 1e-15);
        assert!((kl - 0.318147).abs() < 1e-6);
    }

    #[test]
    fn shifted_mean_closed_form() {
        let before = snap(vec![-0.5, 0.5, -0.5, 0.5]);
        let after = snap(vec![-0.2, 0.8, -0.2, 0.8]);
        let kl = weight_update_kl(&before, &after).unwrap();
        let (delta, sigma) = (0.3, 0.5);
        assert!((kl - delta * delta / (2.0 * sigma * sigma)).abs() < 1e-14);
    }

    #[test]
    fn constant_snapshot_uses_floor() {
        let a = snap(vec![1.0; 3]);
        assert_eq!(a.gaussian_fit().1, KL_STD_FLOOR);
        assert!(weight_update_kl(&a, &a).unwrap() == 0.0);
    }

    #[test]
    fn snapshot_validation() {
        assert!(weight_update_kl(&snap(vec![1.0]), &snap(vec![1.0, 2.0])).is_err());
        assert!(WeightSnapshot::new(0, vec![f64::NAN]).is_err());
    }

    proptest! {
        #[test]
        fn kl_is_nonnegative(
            a in proptest::collection::vec(-5.0f64..5.0, 8),
            b in proptest::collection::vec(-5.0f64..5.0, 8),
        ) {
            prop_assert!(weight_update_kl(&snap(a), &snap(b)).unwrap() >= 0.0);
        }
    }
}
