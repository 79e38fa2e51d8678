//! Autoencoder variants with geometric regularization at the bottleneck.
//!
//! Every variant trains `L = MSE(target, recon) + lambda * MSE(Z, G)`,
//! plus `gamma * MSE(P, prox_head(Z))` when a proximity head is attached.
//! The variants differ only in what the encoder consumes and the decoder
//! reconstructs.

use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::net::{layer_backward, mse, mse_grad, Activation, Layer, LayerGrad, Mlp};
use crate::data::Scaler;
use crate::embed::{Embedding, EmbeddingSource};
use crate::error::{Error, Result};
use crate::forest::Forest;
use crate::proximity::{extend_proximities, ProximityMatrix, PrototypeSet};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Default hidden widths for the encoder; the decoder mirrors them.
pub const DEFAULT_HIDDEN: [usize; 3] = [800, 400, 100];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    RfGrae,
    RfProxIn,
    RfProxReg,
    RfPrn,
    RfPrnPro,
}

impl Variant {
    pub const ALL: [Variant; 5] =
        [Variant::RfGrae, Variant::RfProxIn, Variant::RfProxReg, Variant::RfPrn, Variant::RfPrnPro];

    /// Encoder consumes proximity rows rather than raw features.
    pub fn takes_proximity_input(&self) -> bool {
        matches!(self, Variant::RfProxIn | Variant::RfPrn | Variant::RfPrnPro)
    }

    /// Decoder reconstructs proximity rows rather than features.
    pub fn reconstructs_proximities(&self) -> bool {
        matches!(self, Variant::RfPrn | Variant::RfPrnPro)
    }

    pub fn has_prox_head(&self) -> bool {
        matches!(self, Variant::RfProxReg)
    }

    pub fn needs_prototypes(&self) -> bool {
        matches!(self, Variant::RfPrnPro)
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Variant::RfGrae => "RF-GRAE",
            Variant::RfProxIn => "RF-PROX-IN",
            Variant::RfProxReg => "RF-PROX-REG",
            Variant::RfPrn => "RF-PRN",
            Variant::RfPrnPro => "RF-PRN-PRO",
        };
        write!(f, "{name}")
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rf-grae" => Ok(Variant::RfGrae),
            "rf-prox-in" => Ok(Variant::RfProxIn),
            "rf-prox-reg" => Ok(Variant::RfProxReg),
            "rf-prn" => Ok(Variant::RfPrn),
            "rf-prn-pro" => Ok(Variant::RfPrnPro),
            other => Err(Error::invalid(format!(
                "unknown variant '{other}' (expected rf-grae, rf-prox-in, rf-prox-reg, rf-prn, rf-prn-pro)"
            ))),
        }
    }
}

/// Encoder input and decoder target for a variant.
///
/// RF-GRAE and RF-PROX-REG map features to features; RF-PROX-IN maps
/// proximity rows to features; RF-PRN reconstructs full proximity rows;
/// RF-PRN-PRO restricts both sides to prototype columns.
pub fn build_io(
    variant: Variant,
    x: ArrayView2<f64>,
    p: Option<&ProximityMatrix>,
    protos: Option<&PrototypeSet>,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let prox = || -> Result<&ProximityMatrix> {
        p.ok_or_else(|| Error::invalid(format!("{variant} requires a proximity matrix")))
    };
    match variant {
        Variant::RfGrae | Variant::RfProxReg => Ok((x.to_owned(), x.to_owned())),
        Variant::RfProxIn => {
            let p = prox()?;
            if p.values.nrows() != x.nrows() {
                return Err(Error::invalid("proximity rows do not align with feature rows"));
            }
            Ok((p.values.clone(), x.to_owned()))
        }
        Variant::RfPrn => {
            let p = prox()?;
            if !p.is_square() {
                return Err(Error::NotSquare {
                    rows: p.values.nrows(),
                    cols: p.values.ncols(),
                });
            }
            Ok((p.values.clone(), p.values.clone()))
        }
        Variant::RfPrnPro => {
            let p = prox()?;
            if !p.is_square() {
                return Err(Error::NotSquare {
                    rows: p.values.nrows(),
                    cols: p.values.ncols(),
                });
            }
            let protos = protos
                .ok_or_else(|| Error::invalid("RF-PRN-PRO requires a prototype set"))?;
            let cols = p.values.select(Axis(1), &protos.indices);
            Ok((cols.clone(), cols))
        }
    }
}

#[derive(Debug, Clone)]
pub struct AEModel {
    pub variant: Variant,
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub prox_head: Option<Layer>,
    pub bottleneck: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub prototypes: Option<PrototypeSet>,
    /// Feature scaler applied to raw inputs of feature-consuming variants.
    pub scaler: Option<Scaler>,
    /// Training-time feature names, used to align extension CSVs.
    pub feature_names: Option<Vec<String>>,
}

pub struct ForwardPass {
    pub enc_acts: Vec<Array2<f64>>,
    pub dec_acts: Vec<Array2<f64>>,
    pub prox_pred: Option<Array2<f64>>,
}

impl ForwardPass {
    pub fn z(&self) -> &Array2<f64> {
        self.enc_acts.last().expect("encoder has layers")
    }

    pub fn recon(&self) -> &Array2<f64> {
        self.dec_acts.last().expect("decoder has layers")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub total: f64,
    pub recon: f64,
    pub geom: f64,
    pub prox: f64,
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub encoder: Vec<LayerGrad>,
    pub decoder: Vec<LayerGrad>,
    pub prox_head: Option<LayerGrad>,
}

impl AEModel {
    /// Build an untrained model. `prox_width` sizes the proximity head and
    /// is only consulted for variants that carry one.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        variant: Variant,
        input_width: usize,
        target_width: usize,
        hidden: &[usize],
        bottleneck: usize,
        lambda: f64,
        gamma: f64,
        prox_width: usize,
        seed: u64,
    ) -> Result<Self> {
        if input_width == 0 || target_width == 0 || bottleneck == 0 {
            return Err(Error::invalid("widths must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut enc_widths = vec![input_width];
        enc_widths.extend_from_slice(hidden);
        enc_widths.push(bottleneck);
        let mut dec_widths = vec![bottleneck];
        dec_widths.extend(hidden.iter().rev());
        dec_widths.push(target_width);

        let encoder = Mlp::new(&enc_widths, &mut rng);
        let decoder = Mlp::new(&dec_widths, &mut rng);
        let prox_head = if variant.has_prox_head() {
            if prox_width == 0 {
                return Err(Error::invalid("proximity head requires a positive width"));
            }
            Some(Layer::init(bottleneck, prox_width, Activation::Linear, &mut rng))
        } else {
            None
        };
        Ok(AEModel {
            variant,
            encoder,
            decoder,
            prox_head,
            bottleneck,
            lambda,
            gamma,
            prototypes: None,
            scaler: None,
            feature_names: None,
        })
    }

    pub fn input_width(&self) -> usize {
        self.encoder.input_width()
    }

    pub fn target_width(&self) -> usize {
        self.decoder.output_width()
    }

    pub fn forward(&self, batch: ArrayView2<f64>) -> Result<ForwardPass> {
        if batch.ncols() != self.input_width() {
            return Err(Error::DimensionMismatch {
                expected: self.input_width(),
                got: batch.ncols(),
            });
        }
        let enc_acts = self.encoder.forward_cached(batch);
        let dec_acts = self.decoder.forward_cached(enc_acts.last().unwrap().view());
        let prox_pred = self
            .prox_head
            .as_ref()
            .map(|head| head.forward(enc_acts.last().unwrap().view()));
        Ok(ForwardPass { enc_acts, dec_acts, prox_pred })
    }

    pub fn loss_terms(
        &self,
        fwd: &ForwardPass,
        target: ArrayView2<f64>,
        g_batch: ArrayView2<f64>,
        prox_target: Option<ArrayView2<f64>>,
    ) -> Result<LossTerms> {
        let recon = fwd.recon();
        if target.shape() != recon.shape() {
            return Err(Error::invalid("target shape does not match the reconstruction"));
        }
        let z = fwd.z();
        if g_batch.nrows() != z.nrows() {
            return Err(Error::invalid("regularizer rows do not align with the batch"));
        }
        if g_batch.ncols() != self.bottleneck {
            return Err(Error::DimensionMismatch {
                expected: self.bottleneck,
                got: g_batch.ncols(),
            });
        }
        let recon_term = mse(recon.view(), target);
        let geom_term = mse(z.view(), g_batch);
        let prox_term = match (&fwd.prox_pred, prox_target) {
            (Some(pred), Some(pt)) => {
                if pt.shape() != pred.shape() {
                    return Err(Error::invalid("proximity target shape mismatch"));
                }
                mse(pred.view(), pt)
            }
            (Some(_), None) => {
                return Err(Error::invalid("proximity head present but no proximity target"))
            }
            (None, _) => 0.0,
        };
        Ok(LossTerms {
            total: recon_term + self.lambda * geom_term + self.gamma * prox_term,
            recon: recon_term,
            geom: geom_term,
            prox: prox_term,
        })
    }

    /// Analytic gradients of the full loss for one batch.
    pub fn backward(
        &self,
        fwd: &ForwardPass,
        target: ArrayView2<f64>,
        g_batch: ArrayView2<f64>,
        prox_target: Option<ArrayView2<f64>>,
    ) -> Gradients {
        let d_recon = mse_grad(fwd.recon().view(), target, 1.0);
        let (decoder_grads, dz_decoder) = self.decoder.backward(&fwd.dec_acts, d_recon);

        let mut dz = dz_decoder;
        dz += &mse_grad(fwd.z().view(), g_batch, self.lambda);

        let mut head_grad = None;
        if let (Some(head), Some(pred)) = (&self.prox_head, &fwd.prox_pred) {
            let pt = prox_target.expect("loss_terms enforces a proximity target");
            let d_pred = mse_grad(pred.view(), pt, self.gamma);
            let (grad, dz_head) = layer_backward(head, fwd.z().view(), pred.view(), &d_pred);
            dz += &dz_head;
            head_grad = Some(grad);
        }

        let (encoder_grads, _) = self.encoder.backward(&fwd.enc_acts, dz);
        Gradients { encoder: encoder_grads, decoder: decoder_grads, prox_head: head_grad }
    }

    /// Latent coordinates of already-built encoder inputs.
    pub fn encode(&self, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
        if inputs.ncols() != self.input_width() {
            return Err(Error::DimensionMismatch {
                expected: self.input_width(),
                got: inputs.ncols(),
            });
        }
        Ok(self.encoder.forward(inputs))
    }

    /// Encoder inputs for unseen points: scaled features for
    /// feature-consuming variants, extended proximity rows otherwise
    /// (restricted to prototype columns for RF-PRN-PRO).
    pub fn extension_inputs(
        &self,
        forest: &Forest,
        new_points: ArrayView2<f64>,
    ) -> Result<Array2<f64>> {
        if self.variant.takes_proximity_input() {
            let prox = extend_proximities(forest, new_points)?;
            let inputs = if self.variant.needs_prototypes() {
                let protos = self
                    .prototypes
                    .as_ref()
                    .ok_or_else(|| Error::invalid("model lacks its prototype set"))?;
                prox.values.select(Axis(1), &protos.indices)
            } else {
                prox.values
            };
            Ok(inputs)
        } else {
            match &self.scaler {
                Some(scaler) => scaler.transform(new_points),
                None => Ok(new_points.to_owned()),
            }
        }
    }

    /// Out-of-sample extension: embed unlabeled points through the encoder.
    pub fn extend(&self, forest: &Forest, new_points: ArrayView2<f64>) -> Result<Embedding> {
        let inputs = self.extension_inputs(forest, new_points)?;
        let coords = self.encode(inputs.view())?;
        Ok(Embedding { coords, source: EmbeddingSource::Encoder })
    }

    pub fn to_json(&self, training: Option<TrainingMeta>) -> Result<String> {
        let file = ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            variant: self.variant,
            bottleneck_dim: self.bottleneck,
            lambda: self.lambda,
            gamma: self.gamma,
            encoder: self.encoder.layers.iter().map(LayerSchema::from).collect(),
            decoder: self.decoder.layers.iter().map(LayerSchema::from).collect(),
            prox_head: self.prox_head.as_ref().map(LayerSchema::from),
            prototypes: self.prototypes.clone(),
            scaler: self.scaler.clone(),
            feature_names: self.feature_names.clone(),
            training,
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(json: &str) -> Result<(Self, Option<TrainingMeta>)> {
        let file: ModelFile = serde_json::from_str(json)?;
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported model format version {}",
                file.format_version
            )));
        }
        let encoder = Mlp { layers: file.encoder.iter().map(LayerSchema::to_layer).collect::<Result<_>>()? };
        let decoder = Mlp { layers: file.decoder.iter().map(LayerSchema::to_layer).collect::<Result<_>>()? };
        let prox_head = file.prox_head.as_ref().map(LayerSchema::to_layer).transpose()?;
        Ok((
            AEModel {
                variant: file.variant,
                encoder,
                decoder,
                prox_head,
                bottleneck: file.bottleneck_dim,
                lambda: file.lambda,
                gamma: file.gamma,
                prototypes: file.prototypes,
                scaler: file.scaler,
                feature_names: file.feature_names,
            },
            file.training,
        ))
    }

    pub fn save(&self, path: impl AsRef<Path>, training: Option<TrainingMeta>) -> Result<()> {
        std::fs::write(path, self.to_json(training)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, Option<TrainingMeta>)> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Center each embedding dimension and divide every coordinate by one
/// global scale (the root-mean-square of the centered coordinates), so
/// the geometric weight is comparable across datasets. The single scale
/// leaves pairwise-distance ranks untouched; per-dimension scaling would
/// reshape the embedding's anisotropy and cap how faithfully a bottleneck
/// pinned to it can reproduce the original distances.
pub fn standardize_embedding(coords: ArrayView2<f64>) -> Array2<f64> {
    let (mean, _) = crate::data::column_stats(coords);
    let mut out = coords.to_owned();
    for mut row in out.outer_iter_mut() {
        for j in 0..row.len() {
            row[j] -= mean[j];
        }
    }
    let count = (out.nrows() * out.ncols()) as f64;
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / count).sqrt();
    if rms > 0.0 {
        out.mapv_inplace(|v| v / rms);
    }
    out
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    variant: Variant,
    bottleneck_dim: usize,
    lambda: f64,
    gamma: f64,
    encoder: Vec<LayerSchema>,
    decoder: Vec<LayerSchema>,
    prox_head: Option<LayerSchema>,
    prototypes: Option<PrototypeSet>,
    scaler: Option<Scaler>,
    feature_names: Option<Vec<String>>,
    training: Option<TrainingMeta>,
}

/// Weights are stored flat in row-major order.
#[derive(Serialize, Deserialize)]
struct LayerSchema {
    rows: usize,
    cols: usize,
    activation: Activation,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl From<&Layer> for LayerSchema {
    fn from(layer: &Layer) -> Self {
        LayerSchema {
            rows: layer.w.nrows(),
            cols: layer.w.ncols(),
            activation: layer.act,
            weights: layer.w.iter().copied().collect(),
            bias: layer.b.to_vec(),
        }
    }
}

impl LayerSchema {
    fn to_layer(&self) -> Result<Layer> {
        if self.weights.len() != self.rows * self.cols || self.bias.len() != self.cols {
            return Err(Error::invalid("layer shape does not match stored weights"));
        }
        Ok(Layer {
            w: Array2::from_shape_vec((self.rows, self.cols), self.weights.clone())
                .expect("length checked"),
            b: ndarray::Array1::from_vec(self.bias.clone()),
            act: self.activation,
        })
    }
}

/// Settings echoed into the model file for reproducibility.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: String,
    pub seed: u64,
    pub lr_decay: Option<f64>,
    pub hidden: Vec<usize>,
    pub standardized_g: bool,
    pub final_loss: Option<f64>,
}
