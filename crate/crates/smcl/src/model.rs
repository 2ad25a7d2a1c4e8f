//! Backbones with a linear classifier and a normalized projection head.

use candle_core::{DType, Device, Tensor, Var};
use candle_nn::{
    batch_norm, conv2d_no_bias, linear, BatchNorm, BatchNormConfig, Conv2d, Conv2dConfig, Linear,
    Module, ModuleT, VarBuilder, VarMap,
};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use smcl_core::rng::{stream, MODEL_INIT};
use smcl_core::BackboneId;

use crate::error::{contract, Result};

const RESNET32_BLOCKS: usize = 5;
const RESNET_WIDTHS: [usize; 3] = [16, 32, 64];
const SMALL_WIDTHS: [usize; 4] = [16, 32, 64, 128];

fn conv3x3(in_c: usize, out_c: usize, stride: usize, vb: VarBuilder) -> Result<Conv2d> {
    let cfg = Conv2dConfig {
        padding: 1,
        stride,
        ..Default::default()
    };
    Ok(conv2d_no_bias(in_c, out_c, 3, cfg, vb)?)
}

fn bn(channels: usize, vb: VarBuilder) -> Result<BatchNorm> {
    let cfg = BatchNormConfig {
        eps: 1e-5,
        momentum: 0.1,
        ..Default::default()
    };
    Ok(batch_norm(channels, cfg, vb)?)
}

/// Keeps every other row and column, starting at 0.
fn subsample2(x: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    let x = x.pad_with_zeros(2, 0, h % 2)?.pad_with_zeros(3, 0, w % 2)?;
    let (b, c, h, w) = x.dims4()?;
    Ok(x
        .reshape((b, c, h / 2, 2, w / 2, 2))?
        .narrow(3, 0, 1)?
        .narrow(5, 0, 1)?
        .reshape((b, c, h / 2, w / 2))?)
}

struct BasicBlock {
    conv1: Conv2d,
    bn1: BatchNorm,
    conv2: Conv2d,
    bn2: BatchNorm,
    /// Channels added by the parameter-free shortcut, split evenly on both sides.
    pad: usize,
    stride: usize,
}

impl BasicBlock {
    fn new(in_c: usize, out_c: usize, stride: usize, vb: VarBuilder) -> Result<Self> {
        Ok(Self {
            conv1: conv3x3(in_c, out_c, stride, vb.pp("conv1"))?,
            bn1: bn(out_c, vb.pp("bn1"))?,
            conv2: conv3x3(out_c, out_c, 1, vb.pp("conv2"))?,
            bn2: bn(out_c, vb.pp("bn2"))?,
            pad: (out_c - in_c) / 2,
            stride,
        })
    }

    fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let out = self.bn1.forward_t(&self.conv1.forward(x)?, train)?.relu()?;
        let out = self.bn2.forward_t(&self.conv2.forward(&out)?, train)?;
        let mut shortcut = if self.stride == 2 { subsample2(x)? } else { x.clone() };
        if self.pad > 0 {
            shortcut = shortcut.pad_with_zeros(1, self.pad, self.pad)?;
        }
        Ok((out + shortcut)?.relu()?)
    }
}

struct ResNet32 {
    stem: Conv2d,
    stem_bn: BatchNorm,
    blocks: Vec<BasicBlock>,
}

impl ResNet32 {
    fn new(in_channels: usize, vb: VarBuilder) -> Result<Self> {
        let mut blocks = Vec::new();
        let mut in_c = RESNET_WIDTHS[0];
        for (stage, &width) in RESNET_WIDTHS.iter().enumerate() {
            for i in 0..RESNET32_BLOCKS {
                let stride = if stage > 0 && i == 0 { 2 } else { 1 };
                blocks.push(BasicBlock::new(
                    in_c,
                    width,
                    stride,
                    vb.pp(format!("layer{}.{i}", stage + 1)),
                )?);
                in_c = width;
            }
        }
        Ok(Self {
            stem: conv3x3(in_channels, RESNET_WIDTHS[0], 1, vb.pp("conv1"))?,
            stem_bn: bn(RESNET_WIDTHS[0], vb.pp("bn1"))?,
            blocks,
        })
    }

    fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let mut x = self.stem_bn.forward_t(&self.stem.forward(x)?, train)?.relu()?;
        for block in &self.blocks {
            x = block.forward(&x, train)?;
        }
        Ok(x)
    }
}

struct SmallCnn {
    convs: Vec<(Conv2d, BatchNorm)>,
}

impl SmallCnn {
    fn new(in_channels: usize, vb: VarBuilder) -> Result<Self> {
        let mut convs = Vec::new();
        let mut in_c = in_channels;
        for (i, &width) in SMALL_WIDTHS.iter().enumerate() {
            convs.push((
                conv3x3(in_c, width, 1, vb.pp(format!("block{i}.conv")))?,
                bn(width, vb.pp(format!("block{i}.bn")))?,
            ));
            in_c = width;
        }
        Ok(Self { convs })
    }

    fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let mut x = x.clone();
        let last = self.convs.len() - 1;
        for (i, (conv, norm)) in self.convs.iter().enumerate() {
            x = norm.forward_t(&conv.forward(&x)?, train)?.relu()?;
            if i < last && x.dim(2)? >= 2 && x.dim(3)? >= 2 {
                x = x.max_pool2d(2)?;
            }
        }
        Ok(x)
    }
}

enum Backbone {
    Resnet32(ResNet32),
    Small(SmallCnn),
}

/// Logits and unit-norm projection features, one row per input view.
#[derive(Debug, Clone)]
pub struct ModelOutput {
    pub logits: Tensor,
    pub features: Tensor,
}

/// Network shape: everything needed to rebuild the parameter layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ModelSpec {
    pub arch: BackboneId,
    pub in_channels: usize,
    pub num_classes: usize,
    pub proj_dim: usize,
}

pub struct Model {
    spec: ModelSpec,
    dtype: DType,
    device: Device,
    varmap: VarMap,
    backbone: Backbone,
    classifier: Linear,
    proj_hidden: Linear,
    proj_out: Linear,
}

fn is_running_stat(name: &str) -> bool {
    name.ends_with("running_mean") || name.ends_with("running_var")
}

/// L2-normalizes each row.
pub fn normalize_rows(x: &Tensor) -> Result<Tensor> {
    let norm = x.sqr()?.sum_keepdim(1)?.sqrt()?.maximum(1e-12)?;
    Ok(x.broadcast_div(&norm)?)
}

impl Model {
    /// Builds the network with parameters drawn from the model-init stream of `seed`.
    pub fn new(spec: ModelSpec, dtype: DType, seed: u64) -> Result<Self> {
        if spec.num_classes == 0 || spec.proj_dim == 0 || spec.in_channels == 0 {
            return Err(contract("model dimensions must be positive"));
        }
        let device = Device::Cpu;
        let varmap = VarMap::new();
        let vb = VarBuilder::from_varmap(&varmap, dtype, &device);
        let (backbone, width) = match spec.arch {
            BackboneId::Resnet32 => (
                Backbone::Resnet32(ResNet32::new(spec.in_channels, vb.pp("backbone"))?),
                RESNET_WIDTHS[2],
            ),
            BackboneId::SmallCnn => (
                Backbone::Small(SmallCnn::new(spec.in_channels, vb.pp("backbone"))?),
                SMALL_WIDTHS[3],
            ),
        };
        let model = Self {
            classifier: linear(width, spec.num_classes, vb.pp("classifier"))?,
            proj_hidden: linear(width, width, vb.pp("projection.hidden"))?,
            proj_out: linear(width, spec.proj_dim, vb.pp("projection.out"))?,
            spec,
            dtype,
            device,
            varmap,
            backbone,
        };
        model.initialize(seed)?;
        Ok(model)
    }

    /// Deterministic initialization: He-normal convolutions, unit/zero batch
    /// norm, uniform `1/sqrt(fan_in)` linear layers.
    fn initialize(&self, seed: u64) -> Result<()> {
        let mut rng = stream(seed, MODEL_INIT, 0);
        for (name, var) in self.named_vars() {
            let dims = var.dims().to_vec();
            let count: usize = dims.iter().product();
            let values: Vec<f64> = if name.ends_with("running_var") {
                vec![1.0; count]
            } else if name.ends_with("running_mean") || (name.contains(".bn") && name.ends_with("bias")) {
                vec![0.0; count]
            } else if name.contains(".bn") && name.ends_with("weight") {
                vec![1.0; count]
            } else if dims.len() == 4 {
                let fan_in = dims[1] * dims[2] * dims[3];
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt())
                    .map_err(|e| contract(e.to_string()))?;
                (0..count).map(|_| normal.sample(&mut rng)).collect()
            } else {
                let fan_in = self.linear_fan_in(&name)?;
                let bound = 1.0 / (fan_in as f64).sqrt();
                let uniform =
                    Uniform::new_inclusive(-bound, bound).map_err(|e| contract(e.to_string()))?;
                (0..count).map(|_| rng.sample(uniform)).collect()
            };
            let t = Tensor::from_vec(values, dims, &self.device)?.to_dtype(self.dtype)?;
            var.set(&t)?;
        }
        Ok(())
    }

    fn linear_fan_in(&self, name: &str) -> Result<usize> {
        let prefix = name.rsplit_once('.').map(|(p, _)| p).unwrap_or(name);
        let data = self.varmap.data().lock().expect("varmap lock");
        let weight = data
            .get(&format!("{prefix}.weight"))
            .ok_or_else(|| contract(format!("no weight for {name}")))?;
        Ok(weight.dims()[1])
    }

    pub fn spec(&self) -> ModelSpec {
        self.spec
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    /// Every variable including batch-norm running statistics, sorted by name.
    pub fn named_vars(&self) -> Vec<(String, Var)> {
        let data = self.varmap.data().lock().expect("varmap lock");
        let mut vars: Vec<(String, Var)> =
            data.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        vars.sort_by(|a, b| a.0.cmp(&b.0));
        vars
    }

    /// Variables updated by the optimizer, sorted by name.
    pub fn trainable_vars(&self) -> Vec<(String, Var)> {
        self.named_vars()
            .into_iter()
            .filter(|(name, _)| !is_running_stat(name))
            .collect()
    }

    /// Input tensor `(n, C, H, W)` from normalized pixels.
    pub fn input(&self, pixels: &[f32], n: usize, height: usize, width: usize) -> Result<Tensor> {
        let expected = n * self.spec.in_channels * height * width;
        if pixels.len() != expected {
            return Err(contract(format!(
                "{} input values for {n}x{}x{height}x{width}",
                pixels.len(),
                self.spec.in_channels
            )));
        }
        Ok(Tensor::from_slice(pixels, (n, self.spec.in_channels, height, width), &self.device)?
            .to_dtype(self.dtype)?)
    }

    /// Activations of the last convolutional block.
    pub fn feature_map(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        match &self.backbone {
            Backbone::Resnet32(net) => net.forward(x, train),
            Backbone::Small(net) => net.forward(x, train),
        }
    }

    /// Global average pooling of a feature map.
    pub fn pool(&self, feature_map: &Tensor) -> Result<Tensor> {
        Ok(feature_map.mean(3)?.mean(2)?)
    }

    /// Classifier logits and normalized projection of pooled features.
    pub fn heads(&self, pooled: &Tensor) -> Result<ModelOutput> {
        let logits = self.classifier.forward(pooled)?;
        let hidden = self.proj_hidden.forward(pooled)?.relu()?;
        let features = normalize_rows(&self.proj_out.forward(&hidden)?)?;
        Ok(ModelOutput { logits, features })
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> Result<ModelOutput> {
        let fm = self.feature_map(x, train)?;
        self.heads(&self.pool(&fm)?)
    }

    /// Evaluation-mode logits only.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let fm = self.feature_map(x, false)?;
        Ok(self.classifier.forward(&self.pool(&fm)?)?)
    }

    /// Evaluation-mode predictions: `(class, softmax confidence)` per row.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<(usize, f64)>> {
        let logits = self.logits(x)?.to_dtype(DType::F64)?.to_vec2::<f64>()?;
        Ok(logits.iter().map(|row| argmax_confidence(row)).collect())
    }
}

/// Argmax with ties resolved to the lowest index, plus its softmax probability.
pub fn argmax_confidence(row: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    let max = row[best];
    let denom: f64 = row.iter().map(|v| (v - max).exp()).sum();
    (best, 1.0 / denom)
}
