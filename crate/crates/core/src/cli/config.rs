use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{PicnError, Result};
use crate::problems::{get_problem, ProblemDef, ProblemParams};
use crate::training::TrainingConfig;

/// Environment variable holding the default output directory.
pub const OUT_DIR_ENV: &str = "PICN_OUT_DIR";

/// Run description as read from a TOML file; every field is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: Option<String>,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    /// Problem constants such as `m`, `k`, `ratio`, `misspecified`.
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default)]
    pub grid: GridOverrides,
    #[serde(default)]
    pub training: TrainingOverrides,
    #[serde(default)]
    pub noise: NoiseOverrides,
    #[serde(default)]
    pub spectrum: SpectrumOverrides,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridOverrides {
    pub nx: Option<usize>,
    pub ny: Option<usize>,
    pub spacing: Option<f64>,
    pub boundary_points: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingOverrides {
    pub learning_rate: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub epsilon: Option<f64>,
    pub epochs: Option<usize>,
    pub k_r: Option<f64>,
    pub k_g: Option<f64>,
    pub k_obs: Option<f64>,
    /// Governing:boundary weight ratio, e.g. `[9.0, 1.0]`.
    pub weight_ratio: Option<[f64; 2]>,
    pub log_every: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseOverrides {
    pub std_dev: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumOverrides {
    pub bands: Option<usize>,
    pub cutoff: Option<f64>,
}

fn pick<T: Clone>(flag: &Option<T>, file: &Option<T>) -> Option<T> {
    flag.clone().or_else(|| file.clone())
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| PicnError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PicnError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| PicnError::Config(format!("{}: {e}", path.display())))
    }

    /// Layers `self` (flags) over `base` (file): any value set here wins.
    pub fn over(&self, base: &RunConfig) -> RunConfig {
        let mut params = base.params.clone();
        params.extend(self.params.iter().map(|(k, v)| (k.clone(), *v)));
        let (g, bg) = (&self.grid, &base.grid);
        let (t, bt) = (&self.training, &base.training);
        // A weight ratio and explicit weights from the same layer are
        // resolved later; across layers the flag layer wins as a unit.
        let weights_from_flags = t.weight_ratio.is_some() || t.k_r.is_some() || t.k_g.is_some();
        RunConfig {
            problem: pick(&self.problem, &base.problem),
            seed: pick(&self.seed, &base.seed),
            out_dir: pick(&self.out_dir, &base.out_dir),
            params,
            grid: GridOverrides {
                nx: pick(&g.nx, &bg.nx),
                ny: pick(&g.ny, &bg.ny),
                spacing: pick(&g.spacing, &bg.spacing),
                boundary_points: pick(&g.boundary_points, &bg.boundary_points),
            },
            training: TrainingOverrides {
                learning_rate: pick(&t.learning_rate, &bt.learning_rate),
                beta1: pick(&t.beta1, &bt.beta1),
                beta2: pick(&t.beta2, &bt.beta2),
                epsilon: pick(&t.epsilon, &bt.epsilon),
                epochs: pick(&t.epochs, &bt.epochs),
                k_r: if weights_from_flags { t.k_r } else { bt.k_r },
                k_g: if weights_from_flags { t.k_g } else { bt.k_g },
                weight_ratio: if weights_from_flags { t.weight_ratio } else { bt.weight_ratio },
                k_obs: pick(&t.k_obs, &bt.k_obs),
                log_every: pick(&t.log_every, &bt.log_every),
            },
            noise: NoiseOverrides {
                std_dev: pick(&self.noise.std_dev, &base.noise.std_dev),
                seed: pick(&self.noise.seed, &base.noise.seed),
            },
            spectrum: SpectrumOverrides {
                bands: pick(&self.spectrum.bands, &base.spectrum.bands),
                cutoff: pick(&self.spectrum.cutoff, &base.spectrum.cutoff),
            },
        }
    }

    /// Builds the problem and training configuration. Nothing is computed
    /// beyond problem construction.
    pub fn resolve(&self, default_problem: &str) -> Result<ResolvedRun> {
        let name = self.problem.clone().unwrap_or_else(|| default_problem.to_string());
        let mut params: ProblemParams = self.params.clone();
        let g = &self.grid;
        for (key, value) in [
            ("nx", g.nx.map(|v| v as f64)),
            ("ny", g.ny.map(|v| v as f64)),
            ("spacing", g.spacing),
            ("boundary_points", g.boundary_points.map(|v| v as f64)),
        ] {
            if let Some(v) = value {
                params.insert(key.to_string(), v);
            }
        }
        if let Some(s) = self.noise.std_dev {
            params.insert("noise_std".into(), s);
        }
        if let Some(s) = self.noise.seed {
            params.insert("noise_seed".into(), s as f64);
        }
        let problem = get_problem(&name, &params).map_err(|e| match e {
            PicnError::UnknownParameter { problem, key } => {
                let section = match key.as_str() {
                    "nx" | "ny" | "spacing" | "boundary_points" => "grid",
                    "noise_std" | "noise_seed" => "noise",
                    _ => "params",
                };
                PicnError::Config(format!("{section}.{key}: not a parameter of problem `{problem}`"))
            }
            other => other,
        })?;

        let t = &self.training;
        let mut training = problem.training.clone();
        if let Some([a, b]) = t.weight_ratio {
            if !(a >= 0.0 && b >= 0.0 && a + b > 0.0) {
                return Err(PicnError::Config(format!("training.weight_ratio: invalid ratio {a}:{b}")));
            }
            training.set_ratio(a, b);
        }
        if let Some(v) = t.k_r {
            training.k_r = v;
        }
        if let Some(v) = t.k_g {
            training.k_g = v;
        }
        macro_rules! set {
            ($($f:ident),*) => {$(if let Some(v) = t.$f { training.$f = v; })*};
        }
        set!(learning_rate, beta1, beta2, epsilon, epochs, log_every);
        if t.k_obs.is_some() {
            training.k_obs = t.k_obs;
        }
        if let Some(s) = self.seed {
            training.seed = s;
        }
        training
            .validate()
            .map_err(|e| PicnError::Config(format!("training: {e}")))?;

        let out_dir = self
            .out_dir
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("picn-out"));
        Ok(ResolvedRun {
            problem,
            training,
            out_dir,
            spectrum_bands: self.spectrum.bands.unwrap_or(3),
            spectrum_cutoff: self.spectrum.cutoff,
        })
    }
}

/// Fully resolved run.
#[derive(Debug, Clone)]
pub struct ResolvedRun {
    pub problem: ProblemDef,
    pub training: TrainingConfig,
    pub out_dir: PathBuf,
    pub spectrum_bands: usize,
    pub spectrum_cutoff: Option<f64>,
}

impl ResolvedRun {
    /// Every effective value as a config that resolves back to this run.
    pub fn to_config(&self) -> RunConfig {
        let mut params = self.problem.params.clone();
        let mut take = |k: &str| params.remove(k);
        let grid = GridOverrides {
            nx: take("nx").map(|v| v as usize),
            ny: take("ny").map(|v| v as usize),
            spacing: take("spacing"),
            boundary_points: take("boundary_points").map(|v| v as usize),
        };
        let noise = NoiseOverrides {
            std_dev: take("noise_std"),
            seed: take("noise_seed").map(|v| v as u64),
        };
        let t = &self.training;
        RunConfig {
            problem: Some(self.problem.name.clone()),
            seed: Some(t.seed),
            out_dir: Some(self.out_dir.clone()),
            params,
            grid,
            training: TrainingOverrides {
                learning_rate: Some(t.learning_rate),
                beta1: Some(t.beta1),
                beta2: Some(t.beta2),
                epsilon: Some(t.epsilon),
                epochs: Some(t.epochs),
                k_r: Some(t.k_r),
                k_g: Some(t.k_g),
                k_obs: t.k_obs,
                weight_ratio: None,
                log_every: Some(t.log_every),
            },
            noise,
            spectrum: SpectrumOverrides {
                bands: Some(self.spectrum_bands),
                cutoff: self.spectrum_cutoff,
            },
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(&self.to_config()).map_err(|e| PicnError::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gives_problem_defaults() {
        let r = RunConfig::default().resolve("sweep1d").unwrap();
        assert_eq!(r.training.learning_rate, 1e-3);
        assert_eq!(r.training.epochs, 20_000);
        assert!((r.training.k_g - 0.9).abs() < 1e-15);
        assert!((r.training.k_r - 0.1).abs() < 1e-15);
    }

    #[test]
    fn flags_override_file() {
        let file = RunConfig::from_toml("problem = \"sine_ode\"\n[training]\nepochs = 100\n").unwrap();
        let flags = RunConfig {
            training: TrainingOverrides {
                epochs: Some(10),
                ..Default::default()
            },
            ..Default::default()
        };
        let r = flags.over(&file).resolve("sweep1d").unwrap();
        assert_eq!(r.problem.name, "sine_ode");
        assert_eq!(r.training.epochs, 10);
        let r = RunConfig::default().over(&file).resolve("sweep1d").unwrap();
        assert_eq!(r.training.epochs, 100);
    }

    #[test]
    fn unknown_keys_are_rejected_with_their_path() {
        let e = RunConfig::from_toml("[training]\nepoch = 3\n").unwrap_err().to_string();
        assert!(e.contains("epoch"), "{e}");
        let e = RunConfig::from_toml("colour = 1\n").unwrap_err().to_string();
        assert!(e.contains("colour"), "{e}");
        let e = RunConfig::from_toml("[params]\nm = 2\n")
            .unwrap()
            .resolve("sweep1d")
            .unwrap_err()
            .to_string();
        assert!(e.contains("params.m"), "{e}");
    }

    #[test]
    fn type_mismatch_is_an_error() {
        let e = RunConfig::from_toml("[training]\nepochs = \"many\"\n").unwrap_err().to_string();
        assert!(e.contains("epochs"), "{e}");
    }

    #[test]
    fn unknown_problem_lists_builtins() {
        let cfg = RunConfig {
            problem: Some("nosuch".into()),
            ..Default::default()
        };
        let e = cfg.resolve("sweep1d").unwrap_err().to_string();
        assert!(e.contains("nosuch") && e.contains("sweep1d") && e.contains("starfish"), "{e}");
    }

    #[test]
    fn ratio_and_weights() {
        let cfg = RunConfig::from_toml("[training]\nweight_ratio = [1.0, 3.0]\n").unwrap();
        let r = cfg.resolve("sweep1d").unwrap();
        assert_eq!((r.training.k_g, r.training.k_r), (0.25, 0.75));
        let bad = RunConfig::from_toml("[training]\nlearning_rate = -1.0\n").unwrap();
        assert!(bad.resolve("sweep1d").is_err());
    }

    #[test]
    fn resolved_echo_round_trips_as_toml() {
        let r = RunConfig::default().resolve("sine_ode").unwrap();
        let text = r.to_toml().unwrap();
        let v: toml::Value = toml::from_str(&text).unwrap();
        assert_eq!(v["problem"].as_str(), Some("sine_ode"));
        assert_eq!(v["training"]["learning_rate"].as_float(), Some(0.01));
        assert_eq!(v["params"]["m"].as_float(), Some(1.0));
        for name in crate::problems::BUILTIN_PROBLEMS {
            let r = RunConfig::default().resolve(name).unwrap();
            let back = RunConfig::from_toml(&r.to_toml().unwrap()).unwrap().resolve("sweep1d").unwrap();
            assert_eq!(back.problem.name, name);
            assert_eq!(back.problem.params, r.problem.params, "{name}");
            assert_eq!(back.training, r.training, "{name}");
        }
    }
}
