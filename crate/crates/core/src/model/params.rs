//! Architecture descriptor, named parameter tensors, and initialization.

use ndarray::{ArrayView2, ArrayViewMut2, NdFloat};
use rand::Rng;

use crate::error::{Error, Result};
use crate::features::SeasonMode;
use crate::rng;

/// Which classifier variant a parameter set implements.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    CnnLstmDelta,
    CnnLstm,
    Cnn,
    Lstm,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::CnnLstmDelta => "cnnlstm-delta",
            ModelKind::CnnLstm => "cnnlstm",
            ModelKind::Cnn => "cnn",
            ModelKind::Lstm => "lstm",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cnnlstm-delta" => Ok(ModelKind::CnnLstmDelta),
            "cnnlstm" => Ok(ModelKind::CnnLstm),
            "cnn" => Ok(ModelKind::Cnn),
            "lstm" => Ok(ModelKind::Lstm),
            other => Err(Error::InvalidConfig(format!("unknown model kind {other}"))),
        }
    }
}

/// Shape parameters of one network instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchDescriptor {
    pub season: SeasonMode,
    pub conv_branch: bool,
    pub lstm_branch: bool,
    pub with_delta: bool,
    /// Input channels M.
    pub channels: usize,
    /// Selected timesteps D.
    pub timesteps: usize,
    /// Spatial patch side k.
    pub patch: usize,
    pub conv1d_filters: usize,
    pub lstm_units: usize,
    pub lstm_layers: usize,
    pub conv_filters: usize,
    pub dense_units: usize,
}

impl ArchDescriptor {
    /// Full-size network for one model kind and season.
    pub fn new(kind: ModelKind, season: SeasonMode) -> Result<Self> {
        let (conv, lstm, delta) = match kind {
            ModelKind::CnnLstmDelta => (true, true, true),
            ModelKind::CnnLstm => (true, true, false),
            ModelKind::Cnn => (true, false, false),
            ModelKind::Lstm => (false, true, false),
        };
        if season == SeasonMode::Early && (lstm || delta) {
            return Err(Error::ModeMismatch(format!(
                "{} needs temporal inputs; early season supports only the CNN and forest",
                kind.name()
            )));
        }
        Ok(Self {
            season,
            conv_branch: conv,
            lstm_branch: lstm,
            with_delta: delta,
            channels: crate::cube::MODEL_BANDS.len(),
            timesteps: season.stage_count(),
            patch: crate::features::PATCH_SIZE,
            conv1d_filters: 8,
            lstm_units: 16,
            lstm_layers: 4,
            conv_filters: 64,
            dense_units: 64,
        })
    }

    pub fn kind(&self) -> ModelKind {
        match (self.conv_branch, self.lstm_branch, self.with_delta) {
            (true, true, true) => ModelKind::CnnLstmDelta,
            (true, true, false) => ModelKind::CnnLstm,
            (true, false, _) => ModelKind::Cnn,
            (false, true, _) => ModelKind::Lstm,
            (false, false, _) => unreachable!("descriptor always has a branch"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.conv_branch && !self.lstm_branch {
            return Err(Error::InvalidConfig("no active branch".into()));
        }
        if self.timesteps != self.season.stage_count() {
            return Err(Error::ModeMismatch(format!(
                "descriptor has {} timesteps but {} season has {}",
                self.timesteps,
                self.season,
                self.season.stage_count()
            )));
        }
        if self.with_delta && !self.season.has_delta() {
            return Err(Error::ModeMismatch(
                "early season has no growing-days scalar".into(),
            ));
        }
        if self.lstm_branch && (self.lstm_units == 0 || self.lstm_layers == 0) {
            return Err(Error::InvalidConfig("empty LSTM stack".into()));
        }
        Ok(())
    }

    /// LSTM layer input width: conv1d features for layer 1, then the
    /// concatenation of all previous layers' outputs.
    pub fn lstm_input_width(&self, layer: usize) -> usize {
        if layer == 0 {
            self.conv1d_filters
        } else {
            layer * self.lstm_units
        }
    }

    /// Spatial size after the 2x2 floor max pool.
    pub fn pooled_side(&self) -> usize {
        self.patch / 2
    }

    pub fn conv_flat_len(&self) -> usize {
        self.pooled_side() * self.pooled_side() * self.conv_filters
    }

    pub fn lstm_flat_len(&self) -> usize {
        self.timesteps * self.lstm_units
    }

    /// Width of the fused feature vector entering the dense layer.
    pub fn fusion_input_len(&self) -> usize {
        let conv = if self.conv_branch { self.conv_flat_len() } else { 0 };
        let lstm = if self.lstm_branch { self.lstm_flat_len() } else { 0 };
        conv + lstm + usize::from(self.with_delta)
    }
}

/// One named tensor with explicit dims; data is row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor<F> {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<F>,
    /// Running statistics are carried but never updated by the optimizer.
    pub trainable: bool,
}

impl<F: NdFloat> NamedTensor<F> {
    fn zeros(name: &str, dims: Vec<usize>, trainable: bool) -> Self {
        let len = dims.iter().product();
        Self {
            name: name.to_string(),
            dims,
            data: vec![F::zero(); len],
            trainable,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// 2D view collapsing all but the last dim into rows.
    pub fn as2(&self) -> ArrayView2<'_, F> {
        let cols = *self.dims.last().expect("tensor has dims");
        let rows = self.len() / cols;
        ArrayView2::from_shape((rows, cols), &self.data).expect("shape matches data")
    }

    pub fn as2_mut(&mut self) -> ArrayViewMut2<'_, F> {
        let cols = *self.dims.last().expect("tensor has dims");
        let rows = self.data.len() / cols;
        ArrayViewMut2::from_shape((rows, cols), &mut self.data).expect("shape matches data")
    }
}

/// Every trainable tensor plus normalization running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<F> {
    pub desc: ArchDescriptor,
    pub tensors: Vec<NamedTensor<F>>,
}

/// Gradients mirror the parameter layout exactly.
pub type Gradients<F> = Vec<NamedTensor<F>>;

impl<F: NdFloat> ModelParams<F> {
    pub fn get(&self, name: &str) -> &NamedTensor<F> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .unwrap_or_else(|| panic!("unknown tensor {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut NamedTensor<F> {
        self.tensors
            .iter_mut()
            .find(|t| t.name == name)
            .unwrap_or_else(|| panic!("unknown tensor {name}"))
    }

    pub fn zeros_like(&self) -> Gradients<F> {
        self.tensors
            .iter()
            .map(|t| NamedTensor {
                name: t.name.clone(),
                dims: t.dims.clone(),
                data: vec![F::zero(); t.data.len()],
                trainable: t.trainable,
            })
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }
}

/// The fixed tensor layout for a descriptor: (name, dims, trainable).
pub fn tensor_layout(desc: &ArchDescriptor) -> Vec<(String, Vec<usize>, bool)> {
    let mut layout: Vec<(String, Vec<usize>, bool)> = Vec::new();
    let h = desc.lstm_units;
    if desc.lstm_branch {
        layout.push((
            "conv1d.weight".into(),
            vec![desc.conv1d_filters, desc.channels, 3],
            true,
        ));
        layout.push(("conv1d.bias".into(), vec![desc.conv1d_filters], true));
        for j in 0..desc.lstm_layers {
            let input = desc.lstm_input_width(j);
            let tag = j + 1;
            layout.push((format!("lstm{tag}.w_ih"), vec![input, 4 * h], true));
            layout.push((format!("lstm{tag}.w_hh"), vec![h, 4 * h], true));
            layout.push((format!("lstm{tag}.bias"), vec![4 * h], true));
            layout.push((format!("norm_rec{tag}.gamma"), vec![h], true));
            layout.push((format!("norm_rec{tag}.beta"), vec![h], true));
            layout.push((format!("norm_rec{tag}.mean"), vec![h], false));
            layout.push((format!("norm_rec{tag}.var"), vec![h], false));
        }
    }
    if desc.conv_branch {
        let cin = desc.channels * desc.timesteps;
        for (i, input) in [cin, desc.conv_filters].into_iter().enumerate() {
            let tag = i + 1;
            layout.push((
                format!("conv2d{tag}.weight"),
                vec![desc.conv_filters, input, 3, 3],
                true,
            ));
            layout.push((format!("conv2d{tag}.bias"), vec![desc.conv_filters], true));
            layout.push((format!("norm_conv{tag}.gamma"), vec![desc.conv_filters], true));
            layout.push((format!("norm_conv{tag}.beta"), vec![desc.conv_filters], true));
            layout.push((format!("norm_conv{tag}.mean"), vec![desc.conv_filters], false));
            layout.push((format!("norm_conv{tag}.var"), vec![desc.conv_filters], false));
        }
    }
    layout.push((
        "fusion.weight".into(),
        vec![desc.fusion_input_len(), desc.dense_units],
        true,
    ));
    layout.push(("fusion.bias".into(), vec![desc.dense_units], true));
    layout.push((
        "output.weight".into(),
        vec![desc.dense_units, crate::cube::NUM_CLASSES],
        true,
    ));
    layout.push(("output.bias".into(), vec![crate::cube::NUM_CLASSES], true));
    layout
}

/// Fan-in of a weight tensor under this layout, for init scaling.
fn fan_in(dims: &[usize]) -> usize {
    match dims.len() {
        // dense / lstm input-hidden: [in, out]
        2 => dims[0],
        // conv1d: [filters, in_ch, kw]
        3 => dims[1] * dims[2],
        // conv2d: [filters, in_ch, kh, kw]
        4 => dims[1] * dims[2] * dims[3],
        _ => dims.iter().product(),
    }
}

/// Deterministic fan-scaled uniform initialization.
///
/// Weights are U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases are zero except
/// LSTM forget gates, which start at one; normalization starts as identity.
pub fn init_params<F: NdFloat>(desc: &ArchDescriptor, seed: u64) -> Result<ModelParams<F>> {
    desc.validate()?;
    let mut rng = rng::stream(seed, "init", 0);
    let h = desc.lstm_units;
    let mut tensors = Vec::new();
    for (name, dims, trainable) in tensor_layout(desc) {
        let mut tensor = NamedTensor::<F>::zeros(&name, dims, trainable);
        if name.ends_with(".weight") || name.ends_with(".w_ih") || name.ends_with(".w_hh") {
            let scale = 1.0 / (fan_in(&tensor.dims) as f64).sqrt();
            for v in tensor.data.iter_mut() {
                *v = F::from(rng.gen_range(-scale..scale)).expect("f64 to float");
            }
        } else if name.starts_with("lstm") && name.ends_with(".bias") {
            // gate order (i, f, g, o): forget-gate slice starts at h
            for v in tensor.data[h..2 * h].iter_mut() {
                *v = F::one();
            }
        } else if name.ends_with(".gamma") || name.ends_with(".var") {
            for v in tensor.data.iter_mut() {
                *v = F::one();
            }
        }
        tensors.push(tensor);
    }
    Ok(ModelParams {
        desc: desc.clone(),
        tensors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic() {
        let desc = ArchDescriptor::new(ModelKind::CnnLstmDelta, SeasonMode::Late).unwrap();
        let a: ModelParams<f32> = init_params(&desc, 7).unwrap();
        let b: ModelParams<f32> = init_params(&desc, 7).unwrap();
        assert_eq!(a, b);
        let c: ModelParams<f32> = init_params(&desc, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn parameter_count_matches_shape_accounting() {
        let desc = ArchDescriptor::new(ModelKind::CnnLstmDelta, SeasonMode::Late).unwrap();
        let params: ModelParams<f64> = init_params(&desc, 1).unwrap();
        let (m, d, h, c1, cf, dense) = (10usize, 3usize, 16usize, 8usize, 64usize, 64usize);
        let conv1d = c1 * m * 3 + c1;
        let lstm: usize = (0..4)
            .map(|j| {
                let input = if j == 0 { c1 } else { j * h };
                input * 4 * h + h * 4 * h + 4 * h
            })
            .sum();
        let rec_norm = 4 * 4 * h;
        let conv = cf * (m * d) * 9 + cf + cf * cf * 9 + cf;
        let conv_norm = 2 * 4 * cf;
        let fusion_in = 2 * 2 * cf + d * h + 1;
        let dense_params = fusion_in * dense + dense + dense * 3 + 3;
        let expected = conv1d + lstm + rec_norm + conv + conv_norm + dense_params;
        assert_eq!(params.parameter_count(), expected);
        assert_eq!(desc.fusion_input_len(), fusion_in);
    }

    #[test]
    fn forget_gate_bias_is_one() {
        let desc = ArchDescriptor::new(ModelKind::Lstm, SeasonMode::Late).unwrap();
        let params: ModelParams<f64> = init_params(&desc, 3).unwrap();
        let h = desc.lstm_units;
        for j in 1..=4 {
            let bias = &params.get(&format!("lstm{j}.bias")).data;
            assert!(bias[..h].iter().all(|&v| v == 0.0));
            assert!(bias[h..2 * h].iter().all(|&v| v == 1.0));
            assert!(bias[2 * h..].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn early_season_rejects_temporal_models() {
        assert!(ArchDescriptor::new(ModelKind::Cnn, SeasonMode::Early).is_ok());
        assert!(ArchDescriptor::new(ModelKind::Lstm, SeasonMode::Early).is_err());
        assert!(ArchDescriptor::new(ModelKind::CnnLstmDelta, SeasonMode::Early).is_err());
    }

    #[test]
    fn branch_only_descriptors_drop_unused_tensors() {
        let cnn = ArchDescriptor::new(ModelKind::Cnn, SeasonMode::Late).unwrap();
        let params: ModelParams<f32> = init_params(&cnn, 1).unwrap();
        assert!(params.tensors.iter().all(|t| !t.name.starts_with("lstm")));
        assert_eq!(cnn.fusion_input_len(), 256);

        let lstm = ArchDescriptor::new(ModelKind::Lstm, SeasonMode::Late).unwrap();
        let params: ModelParams<f32> = init_params(&lstm, 1).unwrap();
        assert!(params.tensors.iter().all(|t| !t.name.starts_with("conv2d")));
        assert_eq!(lstm.fusion_input_len(), 48);
    }
}
