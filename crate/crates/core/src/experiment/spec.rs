use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{load_graph_bundle, sbm_generate, Graph, SbmSpec};
use crate::nn::{Activation, Architecture, ModelConfig};
use crate::train::{GridSpace, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    TrainEval,
    EdgeAblation,
    SmoothingRoc,
    AblateLosses,
    Gridsearch,
    GenSbm,
    Gradcheck,
    HomophilyCheck,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 8] = [
        ExperimentKind::TrainEval,
        ExperimentKind::EdgeAblation,
        ExperimentKind::SmoothingRoc,
        ExperimentKind::AblateLosses,
        ExperimentKind::Gridsearch,
        ExperimentKind::GenSbm,
        ExperimentKind::Gradcheck,
        ExperimentKind::HomophilyCheck,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::TrainEval => "train-eval",
            ExperimentKind::EdgeAblation => "edge-ablation",
            ExperimentKind::SmoothingRoc => "smoothing-roc",
            ExperimentKind::AblateLosses => "ablate-losses",
            ExperimentKind::Gridsearch => "gridsearch",
            ExperimentKind::GenSbm => "gen-sbm",
            ExperimentKind::Gradcheck => "gradcheck",
            ExperimentKind::HomophilyCheck => "homophily-check",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment '{s}'")))
    }
}

/// Where the graph comes from: a bundle directory or a generated SBM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    /// Bundle directory, relative paths resolved against the spec file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bundle: Option<PathBuf>,
    /// Classes held out as OOD (bundle datasets).
    #[serde(default)]
    pub ood_classes: Vec<usize>,
    #[serde(default)]
    pub normalize_features: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sbm: Option<SbmSpec>,
    /// Generator seed for SBM datasets.
    #[serde(default)]
    pub seed: u64,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        match (&self.bundle, &self.sbm) {
            (Some(_), Some(_)) => Err(Error::Config(
                "dataset: give either bundle or sbm, not both".into(),
            )),
            (None, None) => Err(Error::Config("dataset: bundle or sbm required".into())),
            (Some(_), None) if self.ood_classes.is_empty() => {
                Err(Error::Config("dataset: bundle needs ood_classes".into()))
            }
            (None, Some(sbm)) => sbm.validate(),
            _ => Ok(()),
        }
    }

    pub fn load(&self) -> Result<Graph> {
        self.validate()?;
        let g = match (&self.bundle, &self.sbm) {
            (Some(dir), _) => load_graph_bundle(dir, &self.ood_classes)?.graph,
            (_, Some(sbm)) => sbm_generate(sbm, self.seed)?,
            _ => unreachable!("validated above"),
        };
        Ok(if self.normalize_features {
            g.row_normalized()
        } else {
            g
        })
    }
}

/// `[model]` table: only `architecture` is required.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub architecture: Architecture,
    pub hidden_dim: Option<usize>,
    pub heads: Option<usize>,
    pub dropout: Option<f64>,
    pub drop_edge: Option<f64>,
    pub activation: Option<Activation>,
}

impl ModelSpec {
    pub fn resolve(&self) -> ModelConfig {
        let mut c = ModelConfig::new(self.architecture);
        if let Some(v) = self.hidden_dim {
            c.hidden_dim = v;
        }
        if let Some(v) = self.heads {
            c.heads = v;
        }
        if let Some(v) = self.dropout {
            c.dropout = v;
        }
        if let Some(v) = self.drop_edge {
            c.drop_edge = v;
        }
        if let Some(v) = self.activation {
            c.activation = v;
        }
        c
    }
}

fn default_splits() -> usize {
    3
}

fn default_seeds() -> usize {
    3
}

fn default_train_per_class() -> usize {
    20
}

fn default_val_per_class() -> usize {
    10
}

fn default_fractions() -> Vec<f64> {
    vec![0.0, 0.5, 1.0]
}

fn default_graphs() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    name: ExperimentKind,
    #[serde(default)]
    dataset: Option<DatasetSpec>,
    #[serde(default)]
    model: Option<ModelSpec>,
    #[serde(default)]
    train: Option<TrainConfig>,
    #[serde(default = "default_splits")]
    splits: usize,
    #[serde(default = "default_seeds")]
    seeds_per_split: usize,
    #[serde(default = "default_train_per_class")]
    train_per_class: usize,
    #[serde(default = "default_val_per_class")]
    val_per_class: usize,
    #[serde(default)]
    seed_base: u64,
    #[serde(default)]
    output_dir: Option<PathBuf>,
    #[serde(default)]
    grid: GridSpace,
    #[serde(default = "default_fractions")]
    fractions: Vec<f64>,
    #[serde(default = "default_graphs")]
    graphs: usize,
}

/// Resolved experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: ExperimentKind,
    pub dataset: Option<DatasetSpec>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub splits: usize,
    pub seeds_per_split: usize,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub seed_base: u64,
    pub output_dir: Option<PathBuf>,
    pub grid: GridSpace,
    /// Inter-edge removal fractions for edge ablation.
    pub fractions: Vec<f64>,
    /// Random graphs for the homophily check.
    pub graphs: usize,
}

impl ExperimentSpec {
    /// Spec with library defaults for `name` and no dataset.
    pub fn new(name: ExperimentKind, architecture: Architecture) -> Self {
        ExperimentSpec {
            name,
            dataset: None,
            model: ModelConfig::new(architecture),
            train: TrainConfig::default(),
            splits: default_splits(),
            seeds_per_split: default_seeds(),
            train_per_class: default_train_per_class(),
            val_per_class: default_val_per_class(),
            seed_base: 0,
            output_dir: None,
            grid: GridSpace::default(),
            fractions: default_fractions(),
            graphs: default_graphs(),
        }
    }

    /// Parses TOML. Relative paths are resolved against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let raw: RawSpec = toml::from_str(text)
            .map_err(|e| Error::Config(e.to_string().trim().replace('\n', " ")))?;
        let model = raw
            .model
            .map(|m| m.resolve())
            .unwrap_or_else(|| ModelConfig::new(Architecture::Oodgat));
        let mut dataset = raw.dataset;
        if let Some(d) = dataset.as_mut() {
            if let Some(b) = d.bundle.as_mut() {
                if b.is_relative() {
                    *b = base_dir.join(&*b);
                }
            }
        }
        let output_dir = raw
            .output_dir
            .map(|p| if p.is_relative() { base_dir.join(p) } else { p });
        let spec = ExperimentSpec {
            name: raw.name,
            dataset,
            model,
            train: raw.train.unwrap_or_default(),
            splits: raw.splits,
            seeds_per_split: raw.seeds_per_split,
            train_per_class: raw.train_per_class,
            val_per_class: raw.val_per_class,
            seed_base: raw.seed_base,
            output_dir,
            grid: raw.grid,
            fractions: raw.fractions,
            graphs: raw.graphs,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if let Some(d) = &self.dataset {
            d.validate()?;
        }
        let needs_runs = !matches!(
            self.name,
            ExperimentKind::GenSbm | ExperimentKind::Gradcheck | ExperimentKind::HomophilyCheck
        );
        if needs_runs {
            if self.dataset.is_none() {
                return Err(Error::Config(format!(
                    "{} needs a [dataset] table",
                    self.name
                )));
            }
            if self.splits == 0 || self.seeds_per_split == 0 {
                return Err(Error::Config(
                    "splits and seeds_per_split must be at least 1".into(),
                ));
            }
            if self.train_per_class == 0 {
                return Err(Error::Config("train_per_class must be at least 1".into()));
            }
        }
        if self.name == ExperimentKind::GenSbm
            && self.dataset.as_ref().is_none_or(|d| d.sbm.is_none())
        {
            return Err(Error::Config("gen-sbm needs [dataset.sbm]".into()));
        }
        if let Some(f) = self.fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
            return Err(Error::Config(format!(
                "edge removal fraction {f} outside [0, 1]"
            )));
        }
        Ok(())
    }

    /// Seed of the `split`-th split.
    pub fn split_seed(&self, split: usize) -> u64 {
        self.seed_base + 1000 + split as u64
    }

    /// Model seed of the `r`-th run within a split.
    pub fn model_seed(&self, r: usize) -> u64 {
        self.seed_base + r as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CORA: &str = r#"
name = "train-eval"

[dataset]
bundle = "../data/cora"
ood_classes = [0, 1, 3]

[model]
architecture = "oodgat"
drop_edge = 0.6

[train]
lr = 0.01
loss = { beta = 2.0, gamma = 0.05, zeta = 0.005, a = 0.9, b = 0.01, epsilon = 0.6 }
"#;

    #[test]
    fn parses_with_defaults() {
        let s = ExperimentSpec::parse(CORA, Path::new("/specs")).unwrap();
        assert_eq!(s.name, ExperimentKind::TrainEval);
        assert_eq!((s.splits, s.seeds_per_split), (3, 3));
        assert_eq!(s.model.heads, 4);
        assert_eq!(s.model.hidden_dim, 32);
        assert_eq!(s.model.drop_edge, 0.6);
        assert_eq!(s.train.loss.beta, 2.0);
        assert_eq!(s.train.max_steps, 1000);
        let d = s.dataset.clone().unwrap();
        assert_eq!(d.bundle.unwrap(), Path::new("/specs/../data/cora"));
        assert_eq!(s.split_seed(2), 1002);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let typo = CORA.replace("drop_edge", "dropedge");
        assert!(matches!(
            ExperimentSpec::parse(&typo, Path::new(".")),
            Err(Error::Config(_))
        ));
        let bad = CORA.replace("drop_edge = 0.6", "drop_edge = 1.5");
        assert!(ExperimentSpec::parse(&bad, Path::new(".")).is_err());
        let no_data = "name = \"train-eval\"\n";
        assert!(ExperimentSpec::parse(no_data, Path::new(".")).is_err());
        assert!(ExperimentSpec::parse("name = \"gradcheck\"\n", Path::new(".")).is_ok());
        assert!("nonsense".parse::<ExperimentKind>().is_err());
    }

    #[test]
    fn shipped_specs_load() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("specs");
        let mut n = 0;
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            let spec =
                ExperimentSpec::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            let stem = path.file_stem().unwrap().to_string_lossy().into_owned();
            if stem.starts_with("cora") {
                assert_eq!(spec.dataset.unwrap().ood_classes, vec![0, 1, 3], "{stem}");
            }
            n += 1;
        }
        assert!(n >= 10);
    }
}
