//! Multi-layer driver: per-layer decomposition jobs, the symmetric and
//! asymmetric reconstruction strategies, and artifact emission.
//!
//! Layers are processed one after another in both strategies. Asymmetric
//! reconstruction has to be sequential (layer `k` is fitted on inputs pushed
//! through the already-approximated layers `1..k`), and the symmetric strategy
//! follows the same order so that the two produce comparable output.

pub mod compare;
mod config;

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample as sample_indices;
use serde::{Deserialize, Serialize};

pub use compare::{compare_nonlinear_linear, Comparison, ComparisonRow, Variant};
pub use config::{Defaults, GridPoint, LayerEntry, Overrides, PipelineConfig, SampleFiles};

use crate::admm::{decompose, LayerProblem, Sample};
use crate::compress::{
    aggregate_rate, compression_rate, format, version_string, CompressedLayer, CompressionRate, ParamCounts,
};
use crate::error::{Error, Result};
use crate::infer::{forward_compressed, forward_dense};
use crate::synthetic::rng;
use crate::tensor::npy::{read_array_file, read_matrix};
use crate::tensor::{im2col, Activation, ArrayValue, ConvGeometry, Matrix, Tensor3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Symmetric,
    Asymmetric,
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "symmetric" => Ok(Strategy::Symmetric),
            "asymmetric" => Ok(Strategy::Asymmetric),
            other => Err(Error::Config(format!("unknown strategy `{other}`"))),
        }
    }
}

/// Data flowing between layers: plain columns (fully-connected) or a batch of
/// feature maps (convolutional).
#[derive(Clone, Debug, PartialEq)]
pub enum Activations {
    Columns(Matrix),
    Images(Vec<Tensor3>),
}

impl Activations {
    /// The lowered input matrix a layer multiplies, one column per output
    /// position (per image, in order).
    pub fn lower(&self, geometry: Option<&ConvGeometry>) -> Result<Matrix> {
        match (self, geometry) {
            (Activations::Columns(x), None) => Ok(x.clone()),
            (Activations::Columns(_), Some(_)) => {
                Err(Error::Geometry("convolutional layer fed with column inputs".into()))
            }
            (Activations::Images(imgs), Some(g)) => {
                let cols = imgs.iter().map(|img| im2col(img, g)).collect::<Result<Vec<_>>>()?;
                Matrix::hstack(&cols.iter().collect::<Vec<_>>())
            }
            (Activations::Images(imgs), None) => {
                let cols: Vec<Matrix> = imgs.iter().map(Tensor3::flatten).collect();
                Matrix::hstack(&cols.iter().collect::<Vec<_>>())
            }
        }
    }

    /// Inverse of [`lower`](Self::lower) for the layer's output.
    fn raise(&self, out: Matrix, geometry: Option<&ConvGeometry>) -> Result<Activations> {
        match (self, geometry) {
            (Activations::Images(imgs), Some(g)) => {
                let per = g.positions();
                let maps = (0..imgs.len())
                    .map(|i| {
                        let block = out.column_range(i * per, (i + 1) * per);
                        Tensor3::from_lowered_output(block, g.out_h(), g.out_w())
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Activations::Images(maps))
            }
            _ => Ok(Activations::Columns(out)),
        }
    }
}

/// One layer of a network as the pipeline sees it.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkLayer {
    pub w: Matrix,
    pub geometry: Option<ConvGeometry>,
    pub activation: Activation,
}

/// Runs `inputs` through `layers`, using the compressed version of a layer
/// where one is given.
pub fn forward_network(
    layers: &[NetworkLayer],
    compressed: &[Option<&CompressedLayer>],
    inputs: &Activations,
) -> Result<Activations> {
    let mut acts = inputs.clone();
    for (k, layer) in layers.iter().enumerate() {
        let x = acts.lower(layer.geometry.as_ref())?;
        let out = match compressed.get(k).copied().flatten() {
            Some(c) => forward_compressed(c, &x, layer.activation)?,
            None => forward_dense(&layer.w, &x, layer.activation)?,
        };
        acts = acts.raise(out, layer.geometry.as_ref())?;
    }
    Ok(acts)
}

/// A config with every referenced array loaded.
#[derive(Clone, Debug)]
pub struct Pipeline {
    pub config: PipelineConfig,
    pub layers: Vec<NetworkLayer>,
    /// Samples read from the layer's own files, if it lists any.
    pub recorded: Vec<Option<Vec<Sample>>>,
    pub inputs: Option<Activations>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSummary {
    pub name: String,
    pub file: String,
    pub shape: (usize, usize),
    pub skipped: bool,
    /// Error message if the layer failed and was passed through.
    pub failed: Option<String>,
    pub nnz_cols: usize,
    /// `None` when the low-rank part is stored dense.
    pub rank: Option<usize>,
    pub params: ParamCounts,
    pub cr: CompressionRate,
    pub residual: Option<f64>,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub strategy: Strategy,
    pub seed: u64,
    pub version: String,
    pub config: PipelineConfig,
    pub layers: Vec<LayerSummary>,
    pub total: CompressionRate,
    pub total_description: String,
}

#[derive(Clone, Debug)]
pub struct PipelineRun {
    pub layers: Vec<CompressedLayer>,
    pub summary: Summary,
}

pub const SUMMARY_FILE: &str = "summary.json";

pub fn layer_file_name(name: &str) -> String {
    format!("{name}.slrl")
}

impl Pipeline {
    /// Loads every array a config references, resolving relative paths
    /// against `base`.
    pub fn load(config: PipelineConfig, base: &Path) -> Result<Self> {
        config.validate()?;
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        let mut layers = Vec::with_capacity(config.layers.len());
        let mut recorded = Vec::with_capacity(config.layers.len());
        for (k, entry) in config.layers.iter().enumerate() {
            let w = read_matrix(resolve(&entry.weights))?;
            layers.push(NetworkLayer {
                w,
                geometry: entry.geometry,
                activation: config.layer_activation(k),
            });
            if entry.samples.is_empty() {
                recorded.push(None);
            } else {
                let samples = entry
                    .samples
                    .iter()
                    .map(|f| {
                        Ok(Sample {
                            x: read_matrix(resolve(&f.x))?,
                            y: read_matrix(resolve(&f.y))?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                recorded.push(Some(samples));
            }
        }
        let inputs = match &config.inputs {
            None => None,
            Some(p) => Some(match read_array_file(resolve(p))? {
                ArrayValue::Matrix(m) => Activations::Columns(m),
                ArrayValue::Tensor4(t) => {
                    let per = t.c * t.kh * t.kw;
                    let imgs = (0..t.n)
                        .map(|i| Tensor3::new(t.c, t.kh, t.kw, t.data[i * per..(i + 1) * per].to_vec()))
                        .collect::<Result<Vec<_>>>()?;
                    Activations::Images(imgs)
                }
            }),
        };
        Pipeline::from_parts(config, layers, recorded, inputs)
    }

    pub fn from_parts(
        config: PipelineConfig,
        layers: Vec<NetworkLayer>,
        recorded: Vec<Option<Vec<Sample>>>,
        inputs: Option<Activations>,
    ) -> Result<Self> {
        if layers.len() != config.layers.len() || recorded.len() != layers.len() {
            return Err(Error::Config("layer data does not match the config".into()));
        }
        for (entry, layer) in config.layers.iter().zip(&layers) {
            if let Some(g) = &layer.geometry {
                if g.patch_len() != layer.w.cols() {
                    return Err(Error::Config(format!(
                        "layer `{}`: geometry patch length {} but weights have {} columns",
                        entry.name,
                        g.patch_len(),
                        layer.w.cols()
                    )));
                }
            }
        }
        Ok(Pipeline {
            config,
            layers,
            recorded,
            inputs,
        })
    }

    /// Every lowered input column and response of each layer on the original
    /// network, when raw inputs are available.
    fn clean_responses(&self) -> Result<Vec<Option<(Matrix, Matrix)>>> {
        let Some(mut acts) = self.inputs.clone() else {
            return Ok(vec![None; self.layers.len()]);
        };
        let mut out = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let x = acts.lower(layer.geometry.as_ref())?;
            let y = forward_dense(&layer.w, &x, layer.activation)?;
            acts = acts.raise(y.clone(), layer.geometry.as_ref())?;
            out.push(Some((x, y)));
        }
        Ok(out)
    }

    /// Per-layer `(X, Y)` pairs on the original network: the recorded files
    /// where given, else the raw inputs pushed through the dense layers.
    pub fn clean_samples(&self) -> Result<Vec<Vec<Sample>>> {
        let full = self.clean_responses()?;
        self.samples_from(&full)
    }

    fn samples_from(&self, full: &[Option<(Matrix, Matrix)>]) -> Result<Vec<Vec<Sample>>> {
        (0..self.layers.len())
            .map(|k| match (&self.recorded[k], &full[k]) {
                (Some(samples), _) => Ok(samples.clone()),
                (None, Some((x, y))) => Ok(self.chunk(k, x, y)),
                (None, None) => Err(Error::Config(format!(
                    "layer `{}` lists no samples and the config has no inputs",
                    self.config.layers[k].name
                ))),
            })
            .collect()
    }

    /// Seeded selection of at most `max_columns` columns, grouped into
    /// samples. The draw depends only on the pipeline seed, the layer name and
    /// the column count, so both strategies select the same columns.
    fn chunk(&self, k: usize, x: &Matrix, y: &Matrix) -> Vec<Sample> {
        let total = x.cols();
        let keep = self.config.defaults.max_columns;
        let cols: Vec<usize> = if total <= keep {
            (0..total).collect()
        } else {
            let name_hash = crc32fast::hash(self.config.layers[k].name.as_bytes()) as u64;
            let mut r = rng(self.config.seed ^ (name_hash << 32 | name_hash));
            let mut idx = sample_indices(&mut r, total, keep).into_vec();
            idx.sort_unstable();
            idx
        };
        cols.chunks(self.config.defaults.columns_per_sample)
            .map(|c| Sample {
                x: x.select_columns(c),
                y: y.select_columns(c),
            })
            .collect()
    }

    /// Compresses every layer in order.
    ///
    /// Symmetric: layer `k` is fitted on its recorded (or clean) inputs.
    /// Asymmetric: layer `k` is fitted on the raw inputs pushed through the
    /// already-compressed layers `1..k`, against the clean responses of the
    /// original network on the same columns; recorded sample files are not
    /// used.
    pub fn run(&self, strategy: Strategy) -> Result<PipelineRun> {
        if strategy == Strategy::Asymmetric && self.inputs.is_none() {
            return Err(Error::Config("the asymmetric strategy needs `inputs`".into()));
        }
        let full = self.clean_responses()?;
        let clean = match strategy {
            Strategy::Symmetric => self.samples_from(&full)?,
            Strategy::Asymmetric => Vec::new(),
        };
        let record = serde_json::json!({
            "strategy": strategy,
            "config": self.config,
        });

        let mut acts = self.inputs.clone();
        let mut layers = Vec::with_capacity(self.layers.len());
        let mut failures = Vec::with_capacity(self.layers.len());
        for (k, layer) in self.layers.iter().enumerate() {
            let entry = &self.config.layers[k];
            let samples = match strategy {
                Strategy::Symmetric => clean[k].clone(),
                Strategy::Asymmetric => {
                    let a = acts.as_ref().expect("inputs checked above");
                    let x = a.lower(layer.geometry.as_ref())?;
                    let (_, y) = full[k].as_ref().expect("inputs checked above");
                    self.chunk(k, &x, y)
                }
            };

            let result = if entry.skip {
                Ok(CompressedLayer::passthrough(&entry.name, &layer.w))
            } else {
                self.compress_layer(k, samples)
            };
            let (mut compressed, failure) = match result {
                Ok(c) => (c, None),
                Err(e) if self.config.continue_on_error => {
                    (CompressedLayer::passthrough(&entry.name, &layer.w), Some(e.to_string()))
                }
                Err(e) => return Err(e),
            };
            compressed.metadata.seed = Some(self.config.seed);
            compressed.metadata.config = Some(record.clone());

            if let Some(a) = &acts {
                let x = a.lower(layer.geometry.as_ref())?;
                let out = forward_compressed(&compressed, &x, layer.activation)?;
                acts = Some(a.raise(out, layer.geometry.as_ref())?);
            }
            layers.push(compressed);
            failures.push(failure);
        }

        let summary = summarize(strategy, &self.config, &layers, &failures);
        Ok(PipelineRun { layers, summary })
    }

    fn compress_layer(&self, k: usize, samples: Vec<Sample>) -> Result<CompressedLayer> {
        let entry = &self.config.layers[k];
        let layer = &self.layers[k];
        let hp = self.config.layer_hyperparams(k)?;
        let problem = LayerProblem::new(layer.w.clone(), samples, layer.activation)?;
        let d = decompose(&problem, &hp)?;
        let defaults = &self.config.defaults;
        CompressedLayer::from_decomposition(&entry.name, &d, &hp, defaults.zero_tol, defaults.sv_tol)
    }
}

fn summarize(
    strategy: Strategy,
    config: &PipelineConfig,
    layers: &[CompressedLayer],
    failures: &[Option<String>],
) -> Summary {
    let rows = layers
        .iter()
        .zip(failures)
        .map(|(l, failed)| LayerSummary {
            name: l.metadata.name.clone(),
            file: layer_file_name(&l.metadata.name),
            shape: l.original_shape,
            skipped: l.metadata.skipped,
            failed: failed.clone(),
            nnz_cols: l.sparse.nnz_cols(),
            rank: l.lowrank.rank(),
            params: l.param_counts,
            cr: compression_rate(l),
            residual: l.metadata.residual,
            iterations: l.metadata.iterations,
            converged: l.metadata.converged,
        })
        .collect();
    let total = aggregate_rate(layers);
    Summary {
        strategy,
        seed: config.seed,
        version: version_string(),
        config: config.clone(),
        layers: rows,
        total,
        total_description: total.describe(),
    }
}

impl PipelineRun {
    /// Writes one container per layer plus `summary.json` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        let mut written = Vec::with_capacity(self.layers.len() + 1);
        for layer in &self.layers {
            let path = dir.join(layer_file_name(&layer.metadata.name));
            format::serialize(layer, &path)?;
            written.push(path);
        }
        let path = dir.join(SUMMARY_FILE);
        let mut text = serde_json::to_string_pretty(&self.summary).expect("summary serializes");
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        written.push(path);
        Ok(written)
    }
}

/// Reads a run directory back and checks that the summary's rates follow
/// from the stored layers.
pub fn load_run(dir: impl AsRef<Path>) -> Result<PipelineRun> {
    let dir = dir.as_ref();
    let path = dir.join(SUMMARY_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let summary: Summary =
        serde_json::from_str(&text).map_err(|e| Error::Corrupt(format!("{}: {e}", path.display())))?;
    let layers = summary
        .layers
        .iter()
        .map(|row| format::deserialize(dir.join(&row.file)))
        .collect::<Result<Vec<_>>>()?;
    for (row, layer) in summary.layers.iter().zip(&layers) {
        if compression_rate(layer) != row.cr || layer.param_counts != row.params {
            return Err(Error::Corrupt(format!(
                "layer `{}`: stored rate does not match the summary",
                row.name
            )));
        }
    }
    if aggregate_rate(&layers) != summary.total {
        return Err(Error::Corrupt("total rate does not match the stored layers".into()));
    }
    Ok(PipelineRun { layers, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{lower_filter, Tensor4};

    fn entry(name: &str) -> LayerEntry {
        LayerEntry {
            name: name.into(),
            weights: PathBuf::from(format!("{name}.npy")),
            samples: vec![],
            activation: None,
            mode: None,
            hyperparams: None,
            skip: false,
            geometry: None,
        }
    }

    #[test]
    fn conv_then_fc_forward() {
        let g = ConvGeometry::square(1, 3, 2, 1, 0);
        let filt = Tensor4::new(2, 1, 2, 2, vec![1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
        let conv = NetworkLayer {
            w: lower_filter(&filt),
            geometry: Some(g),
            activation: Activation::Relu,
        };
        let fc = NetworkLayer {
            w: Matrix::from_fn(1, 8, |_, j| j as f64),
            geometry: None,
            activation: Activation::Identity,
        };
        let img = Tensor3::new(1, 3, 3, (0..9).map(|v| v as f64).collect()).unwrap();
        let out = forward_network(&[conv, fc], &[], &Activations::Images(vec![img.clone(), img])).unwrap();
        // conv maps: diagonal sums [4,6,10,12] and anti-diagonal sums [4,6,10,12]
        let Activations::Columns(m) = out else {
            panic!("fc output is columns")
        };
        let expect = [4.0, 6.0, 10.0, 12.0, 4.0, 6.0, 10.0, 12.0]
            .iter()
            .enumerate()
            .map(|(j, v)| j as f64 * v)
            .sum::<f64>();
        assert_eq!(m.shape(), (1, 2));
        assert_eq!(m[(0, 0)], expect);
        assert_eq!(m[(0, 1)], expect);
    }

    #[test]
    fn columns_into_conv_is_geometry_error() {
        let g = ConvGeometry::square(1, 3, 2, 1, 0);
        let acts = Activations::Columns(Matrix::zeros(4, 2));
        assert!(matches!(acts.lower(Some(&g)), Err(Error::Geometry(_))));
    }

    #[test]
    fn chunking_caps_and_groups() {
        let mut cfg = PipelineConfig::from_json(r#"{"layers": [{"name": "fc", "weights": "w"}]}"#).unwrap();
        cfg.defaults.max_columns = 10;
        cfg.defaults.columns_per_sample = 4;
        let p = Pipeline::from_parts(
            cfg,
            vec![NetworkLayer {
                w: Matrix::zeros(2, 3),
                geometry: None,
                activation: Activation::Relu,
            }],
            vec![None],
            None,
        )
        .unwrap();
        let x = Matrix::from_fn(3, 25, |i, j| (i * 25 + j) as f64);
        let y = Matrix::from_fn(2, 25, |_, j| j as f64);
        let s = p.chunk(0, &x, &y);
        assert_eq!(s.iter().map(|s| s.x.cols()).collect::<Vec<_>>(), vec![4, 4, 2]);
        let picked: Vec<f64> = s.iter().flat_map(|s| s.y.row(0).to_vec()).collect();
        assert!(picked.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(p.chunk(0, &x, &y), s);
    }

    #[test]
    fn missing_samples_without_inputs_is_config_error() {
        let cfg = PipelineConfig {
            layers: vec![entry("fc")],
            ..PipelineConfig::from_json(r#"{"layers": [{"name": "x", "weights": "w"}]}"#).unwrap()
        };
        let p = Pipeline::from_parts(
            cfg,
            vec![NetworkLayer {
                w: Matrix::identity(2),
                geometry: None,
                activation: Activation::Relu,
            }],
            vec![None],
            None,
        )
        .unwrap();
        assert!(matches!(p.run(Strategy::Symmetric), Err(Error::Config(_))));
    }
}
