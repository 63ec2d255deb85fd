use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::admm::{HyperParams, Mode};
use crate::error::{Error, Result};
use crate::tensor::{Activation, ConvGeometry};

/// Pipeline configuration, read from JSON. Unknown keys are rejected.
///
/// ```json
/// {
///   "seed": 7,
///   "output_dir": "out",
///   "inputs": "raw_inputs.npy",
///   "defaults": { "hyperparams": { "lambda1": 0.1, "lambda2": 0.275 } },
///   "layers": [
///     { "name": "conv1", "weights": "conv1.npy", "skip": true,
///       "geometry": { "in_h": 8, "in_w": 8, "channels": 3, "kernel_h": 3,
///                     "kernel_w": 3, "stride": 1, "padding": 1 } },
///     { "name": "fc2", "weights": "fc2.npy",
///       "samples": [ { "x": "fc2_x0.npy", "y": "fc2_y0.npy" } ],
///       "hyperparams": { "lambda1": 0.2 } }
///   ]
/// }
/// ```
///
/// Layers are listed in network order. Relative paths resolve against the
/// config file's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub defaults: Defaults,
    /// Raw network inputs: `m × P` columns, or `N × C × H × W` images when the
    /// first layer is convolutional. Required by the asymmetric strategy and by
    /// layers that list no sample files.
    #[serde(default)]
    pub inputs: Option<PathBuf>,
    /// Keep going past a failing layer, passing it through unapproximated.
    #[serde(default)]
    pub continue_on_error: bool,
    /// λ points for the nonlinear/linear comparison; empty means a default
    /// sweep around `defaults.hyperparams`.
    #[serde(default)]
    pub compare_grid: Vec<GridPoint>,
    pub layers: Vec<LayerEntry>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Defaults {
    pub hyperparams: HyperParams,
    pub activation: Activation,
    /// Lowered columns kept per layer, drawn with the pipeline seed.
    pub max_columns: usize,
    /// Columns grouped into one sample.
    pub columns_per_sample: usize,
    /// Columns of `A` at or below this norm are not stored.
    pub zero_tol: f64,
    /// Singular values at or below this fraction of the largest are dropped.
    pub sv_tol: f64,
}

impl Default for Defaults {
    fn default() -> Self {
        Defaults {
            hyperparams: HyperParams::default(),
            activation: Activation::Relu,
            max_columns: 64,
            columns_per_sample: 8,
            zero_tol: 0.0,
            sv_tol: 1e-10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerEntry {
    pub name: String,
    /// 2-D lowered weights, or a 4-D filter bank lowered on load.
    pub weights: PathBuf,
    #[serde(default)]
    pub samples: Vec<SampleFiles>,
    #[serde(default)]
    pub activation: Option<Activation>,
    #[serde(default)]
    pub mode: Option<Mode>,
    /// Partial hyperparameters merged over the defaults.
    #[serde(default)]
    pub hyperparams: Option<Value>,
    #[serde(default)]
    pub skip: bool,
    /// Present for convolutional layers.
    #[serde(default)]
    pub geometry: Option<ConvGeometry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleFiles {
    pub x: PathBuf,
    pub y: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridPoint {
    pub lambda1: f64,
    pub lambda2: f64,
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
    pub mode: Option<Mode>,
    pub output_dir: Option<PathBuf>,
}

impl Overrides {
    pub fn is_empty(&self) -> bool {
        *self == Overrides::default()
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file. The returned directory is the base for its
    /// relative paths.
    pub fn load(path: impl AsRef<Path>) -> Result<(Self, PathBuf)> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let cfg = Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((cfg, base))
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config("no layers listed".into()));
        }
        let mut names = std::collections::BTreeSet::new();
        for layer in &self.layers {
            if layer.name.is_empty() || layer.name.contains(['/', '\\']) {
                return Err(Error::Config(format!("invalid layer name `{}`", layer.name)));
            }
            if !names.insert(&layer.name) {
                return Err(Error::Config(format!("duplicate layer name `{}`", layer.name)));
            }
            if let Some(g) = &layer.geometry {
                g.validate()
                    .map_err(|e| Error::Config(format!("layer `{}`: {e}", layer.name)))?;
            }
            if let Some(v) = &layer.hyperparams {
                if !v.is_object() {
                    return Err(Error::Config(format!(
                        "layer `{}`: hyperparams must be an object",
                        layer.name
                    )));
                }
            }
        }
        if self.defaults.max_columns == 0 || self.defaults.columns_per_sample == 0 {
            return Err(Error::Config(
                "max_columns and columns_per_sample must be positive".into(),
            ));
        }
        if !(self.defaults.zero_tol >= 0.0) || !(self.defaults.sv_tol >= 0.0) {
            return Err(Error::Config("zero_tol and sv_tol must be nonnegative".into()));
        }
        for (i, g) in self.compare_grid.iter().enumerate() {
            if !(g.lambda1 > 0.0 && g.lambda2 > 0.0) {
                return Err(Error::Config(format!("compare_grid[{i}]: λ values must be positive")));
            }
        }
        Ok(())
    }

    /// Folds command-line overrides into the config so that the recorded
    /// config is the one that ran.
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(dir) = &o.output_dir {
            self.output_dir = dir.clone();
        }
        let hp = &mut self.defaults.hyperparams;
        if let Some(v) = o.tol {
            hp.tol = v;
        }
        if let Some(v) = o.max_iter {
            hp.max_iter = v;
        }
        if let Some(v) = o.lambda1 {
            hp.lambda1 = v;
        }
        if let Some(v) = o.lambda2 {
            hp.lambda2 = v;
        }
        if let Some(v) = o.mode {
            hp.mode = v;
        }
        // a flag beats a per-layer setting of the same field
        for layer in &mut self.layers {
            if o.mode.is_some() {
                layer.mode = None;
            }
            if let Some(Value::Object(map)) = &mut layer.hyperparams {
                for (key, set) in [
                    ("tol", o.tol.is_some()),
                    ("max_iter", o.max_iter.is_some()),
                    ("lambda1", o.lambda1.is_some()),
                    ("lambda2", o.lambda2.is_some()),
                    ("mode", o.mode.is_some()),
                ] {
                    if set {
                        map.remove(key);
                    }
                }
            }
        }
    }

    /// Effective hyperparameters of one layer: defaults, then the layer's
    /// partial overrides, then its `mode`. The SGD seed is the pipeline seed
    /// unless the layer sets one.
    pub fn layer_hyperparams(&self, index: usize) -> Result<HyperParams> {
        let layer = &self.layers[index];
        let mut base = self.defaults.hyperparams.clone();
        base.sgd.seed = self.seed;
        let mut hp = match &layer.hyperparams {
            None => base,
            Some(patch) => {
                let mut merged = serde_json::to_value(&base).expect("hyperparams serialize");
                merge(&mut merged, patch);
                serde_json::from_value(merged)
                    .map_err(|e| Error::Config(format!("layer `{}` hyperparams: {e}", layer.name)))?
            }
        };
        if let Some(mode) = layer.mode {
            hp.mode = mode;
        }
        hp.validate()
            .map_err(|e| Error::Config(format!("layer `{}`: {e}", layer.name)))?;
        Ok(hp)
    }

    pub fn layer_activation(&self, index: usize) -> Activation {
        self.layers[index].activation.unwrap_or(self.defaults.activation)
    }

    pub fn grid(&self) -> Vec<GridPoint> {
        if !self.compare_grid.is_empty() {
            return self.compare_grid.clone();
        }
        let hp = &self.defaults.hyperparams;
        [0.25, 0.5, 1.0, 2.0, 4.0]
            .iter()
            .map(|s| GridPoint {
                lambda1: hp.lambda1 * s,
                lambda2: hp.lambda2 * s,
            })
            .collect()
    }
}

fn merge(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, p) => *b = p.clone(),
    }
}
