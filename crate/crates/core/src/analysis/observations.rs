use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::error::{PicnError, Result};
use crate::grid::GridSpec;

/// Zero-mean Gaussian noise with a fixed seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NoiseModel {
    pub std_dev: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub fn gaussian(std_dev: f64, seed: u64) -> Result<Self> {
        if !(std_dev >= 0.0) || !std_dev.is_finite() {
            return Err(PicnError::InvalidArgument(format!(
                "noise standard deviation must be finite and >= 0, got {std_dev}"
            )));
        }
        Ok(Self { std_dev, seed })
    }

    pub fn none() -> Self {
        Self { std_dev: 0.0, seed: 0 }
    }

    pub fn is_identity(&self) -> bool {
        self.std_dev == 0.0
    }
}

/// Adds independent `N(0, std_dev^2)` noise to every value.
pub fn add_gaussian_noise(values: &[f64], model: &NoiseModel) -> Vec<f64> {
    if model.is_identity() {
        return values.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
    let normal = Normal::new(0.0, model.std_dev).expect("validated std_dev");
    values.iter().map(|v| v + normal.sample(&mut rng)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ObservationKind {
    /// `sin(x) sinh(y / sqrt(ratio))`, which solves `u_xx + ratio u_yy = 0`.
    Aniso { ratio: f64 },
    /// `sin(x + 5y) + exp(-x)`.
    Explicit,
}

impl ObservationKind {
    pub fn value(&self, x: f64, y: f64) -> f64 {
        match *self {
            Self::Aniso { ratio } => x.sin() * (y / ratio.sqrt()).sinh(),
            Self::Explicit => (x + 5.0 * y).sin() + (-x).exp(),
        }
    }
}

impl FromStr for ObservationKind {
    type Err = PicnError;

    /// `aniso`, `aniso:<ratio>` or `explicit`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || PicnError::InvalidArgument(format!("unknown observation kind `{s}` (expected aniso[:ratio] or explicit)"));
        match s.split_once(':') {
            None if s == "aniso" => Ok(Self::Aniso { ratio: 5.0 }),
            None if s == "explicit" => Ok(Self::Explicit),
            Some(("aniso", r)) => {
                let ratio: f64 = r.parse().map_err(|_| bad())?;
                if !(ratio > 0.0) {
                    return Err(bad());
                }
                Ok(Self::Aniso { ratio })
            }
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Provenance {
    SyntheticClean,
    SyntheticNoisy { std_dev: f64, seed: u64 },
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::SyntheticClean => write!(f, "synthetic-clean"),
            Self::SyntheticNoisy { std_dev, seed } => write!(f, "synthetic-noisy(sigma={std_dev}, seed={seed})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    /// `(x, y, value)` triples.
    pub points: Vec<(f64, f64, f64)>,
    pub provenance: Provenance,
    /// Noise-free values at the same points.
    pub clean: Vec<f64>,
}

/// Samples `kind` at every grid node (row-major) and adds noise to the
/// values.
pub fn make_observations(kind: &ObservationKind, grid: &GridSpec, noise: &NoiseModel) -> Result<ObservationSet> {
    if let ObservationKind::Aniso { ratio } = kind {
        if !(*ratio > 0.0) {
            return Err(PicnError::InvalidArgument(format!("anisotropy ratio must be positive, got {ratio}")));
        }
    }
    let coords: Vec<(f64, f64)> = (0..grid.ny)
        .flat_map(|i| (0..grid.nx).map(move |j| (i, j)))
        .map(|(i, j)| grid.node(i, j))
        .collect();
    let clean: Vec<f64> = coords.iter().map(|&(x, y)| kind.value(x, y)).collect();
    let noisy = add_gaussian_noise(&clean, noise);
    let provenance = if noise.is_identity() {
        Provenance::SyntheticClean
    } else {
        Provenance::SyntheticNoisy {
            std_dev: noise.std_dev,
            seed: noise.seed,
        }
    };
    Ok(ObservationSet {
        points: coords.iter().zip(&noisy).map(|(&(x, y), &v)| (x, y, v)).collect(),
        provenance,
        clean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> GridSpec {
        GridSpec::new(0.0, 1.0, 0.0, 1.0, 21, 21).unwrap()
    }

    #[test]
    fn zero_noise_is_identity() {
        let v = vec![1.0, 2.0, 3.0];
        assert_eq!(add_gaussian_noise(&v, &NoiseModel::gaussian(0.0, 9).unwrap()), v);
    }

    #[test]
    fn noise_is_seeded() {
        let v = vec![0.0; 50];
        let m = NoiseModel::gaussian(0.3, 4).unwrap();
        assert_eq!(add_gaussian_noise(&v, &m), add_gaussian_noise(&v, &m));
        let other = NoiseModel::gaussian(0.3, 5).unwrap();
        assert_ne!(add_gaussian_noise(&v, &m), add_gaussian_noise(&v, &other));
    }

    #[test]
    fn negative_std_rejected() {
        assert!(NoiseModel::gaussian(-0.1, 0).is_err());
    }

    #[test]
    fn explicit_origin_value() {
        assert_eq!(ObservationKind::Explicit.value(0.0, 0.0), 1.0);
    }

    #[test]
    fn provenance_tags() {
        let clean = make_observations(&ObservationKind::Aniso { ratio: 5.0 }, &unit(), &NoiseModel::none()).unwrap();
        assert_eq!(clean.provenance, Provenance::SyntheticClean);
        assert_eq!(clean.points.len(), 441);
        assert_eq!(clean.provenance.to_string(), "synthetic-clean");
        let noisy = make_observations(&ObservationKind::Explicit, &unit(), &NoiseModel::gaussian(0.1, 3).unwrap()).unwrap();
        assert!(matches!(noisy.provenance, Provenance::SyntheticNoisy { std_dev, seed: 3 } if std_dev == 0.1));
        for (p, c) in noisy.points.iter().zip(&noisy.clean) {
            assert!(p.0 >= 0.0 && p.0 <= 1.0 && p.1 >= 0.0 && p.1 <= 1.0);
            assert_eq!(*c, ObservationKind::Explicit.value(p.0, p.1));
        }
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("aniso".parse::<ObservationKind>().unwrap(), ObservationKind::Aniso { ratio: 5.0 });
        assert_eq!("aniso:1".parse::<ObservationKind>().unwrap(), ObservationKind::Aniso { ratio: 1.0 });
        assert_eq!("explicit".parse::<ObservationKind>().unwrap(), ObservationKind::Explicit);
        assert!("fem".parse::<ObservationKind>().is_err());
        assert!("aniso:-2".parse::<ObservationKind>().is_err());
    }
}
