//! Class-conditional feature generators used for replay.

mod gan;
mod gaussian;

pub use gan::{
    conditioned, critic_loss, generator_adversarial_loss, replay_alignment_loss, standard_normal, train_feature_gan,
    CriticTerms, FeatureGan, GanConfig, GanHistory, Lipschitz,
};
pub use gaussian::{CovarianceKind, GaussianPrototypeBank, Prototype, EIGEN_FLOOR};

use ndarray::Array2;
use rand::Rng;

use crate::error::Result;

/// Either generator variant, sampled through one interface.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureGenerator {
    Gaussian(GaussianPrototypeBank),
    Gan(FeatureGan),
}

impl FeatureGenerator {
    pub fn variant(&self) -> &'static str {
        match self {
            FeatureGenerator::Gaussian(_) => "gaussian",
            FeatureGenerator::Gan(_) => "gan",
        }
    }

    /// Class labels (head positions) the generator can sample.
    pub fn covered_classes(&self) -> Vec<usize> {
        match self {
            FeatureGenerator::Gaussian(bank) => bank.classes(),
            FeatureGenerator::Gan(gan) => (0..gan.num_classes()).collect(),
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self {
            FeatureGenerator::Gaussian(bank) => bank.dim(),
            FeatureGenerator::Gan(gan) => gan.feature_dim(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, labels: &[usize], rng: &mut R) -> Result<Array2<f64>> {
        match self {
            FeatureGenerator::Gaussian(bank) => bank.sample(labels, rng),
            FeatureGenerator::Gan(gan) => gan.sample(labels, rng),
        }
    }
}

/// One replay feature per label; fails on labels the generator does not cover.
pub fn sample_features<R: Rng + ?Sized>(gen: &FeatureGenerator, labels: &[usize], rng: &mut R) -> Result<Array2<f64>> {
    gen.sample(labels, rng)
}

/// Adds prototypes for `classes` estimated from labeled features; other
/// classes keep their existing entries.
pub fn fit_gaussian_prototypes(
    bank: &mut GaussianPrototypeBank,
    features: &Array2<f64>,
    labels: &[usize],
    classes: &[usize],
) -> Result<()> {
    bank.fit(features, labels, classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use ndarray::array;

    #[test]
    fn coverage_grows_with_each_fit() {
        let mut bank = GaussianPrototypeBank::new(1, CovarianceKind::Diagonal);
        let x = array![[0.0], [1.0], [4.0], [5.0], [8.0], [9.0]];
        let labels = [0, 0, 1, 1, 2, 2];
        let mut seen = Vec::new();
        for task in [vec![0], vec![1, 2]] {
            fit_gaussian_prototypes(&mut bank, &x, &labels, &task).unwrap();
            seen.extend(task);
            assert_eq!(FeatureGenerator::Gaussian(bank.clone()).covered_classes(), seen);
        }
    }

    #[test]
    fn zero_variance_bank_replays_means() {
        let mut bank = GaussianPrototypeBank::new(2, CovarianceKind::Diagonal);
        let x = array![[1.0, 2.0], [1.0, 2.0], [-3.0, 0.5], [-3.0, 0.5]];
        bank.fit(&x, &[0, 0, 1, 1], &[0, 1]).unwrap();
        let gen = FeatureGenerator::Gaussian(bank);
        let s = sample_features(&gen, &[1, 0, 1], &mut rng_from_seed(3)).unwrap();
        assert_eq!(s, array![[-3.0, 0.5], [1.0, 2.0], [-3.0, 0.5]]);
        assert!(sample_features(&gen, &[2], &mut rng_from_seed(3)).is_err());
    }
}
