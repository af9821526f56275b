//! Small MLP encoders and the teacher/student networks.
//!
//! Networks own one flat [`ParamVector`]; forward passes return a trace that
//! the matching `backward` consumes. Parameter order is fixed:
//!
//! - teacher: `enc_a`, `enc_b`, `fusion`, `head`
//! - student: `enc_a`, `head`
//! - inside an MLP, layer by layer: weight matrix (row-major, `out x in`),
//!   then bias.
//!
//! The activation is applied after every layer except the last one, so every
//! encoder output, fused feature and logit vector is affine in its last layer.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{PgadError, Result};
use crate::rng::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            // `f64::max` would map NaN to 0 and hide it from the health checks.
            Activation::Relu => {
                if x > 0.0 || x.is_nan() {
                    x
                } else {
                    0.0
                }
            }
            Activation::Tanh => x.tanh(),
        }
    }

    // Derivative expressed through the pre-activation value.
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = pre.tanh();
                1.0 - t * t
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    /// Input width, hidden widths..., output width.
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(layer_widths: Vec<usize>, activation: Activation) -> Result<Self> {
        let spec = MlpSpec {
            layer_widths,
            activation,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 2 {
            return Err(PgadError::config(
                "layer_widths",
                "needs an input and an output width",
            ));
        }
        if self.layer_widths.contains(&0) {
            return Err(PgadError::config("layer_widths", "all widths must be >= 1"));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.layer_widths
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }
}

/// Flat parameter (or gradient) storage for a whole network.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        ParamVector(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn squared_norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum()
    }

    pub fn scale(&mut self, factor: f64) {
        self.0.iter_mut().for_each(|x| *x *= factor);
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

/// Intermediate values of one MLP forward pass.
#[derive(Debug, Clone)]
pub struct MlpTrace {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

fn init_uniform(spec: &MlpSpec, out: &mut Vec<f64>, rng: &mut crate::rng::Rng) {
    for w in spec.layer_widths.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let s = 1.0 / (fan_in as f64).sqrt();
        for _ in 0..fan_in * fan_out + fan_out {
            out.push(rng.random_range(-s..=s));
        }
    }
}

pub fn mlp_forward(spec: &MlpSpec, params: &[f64], x: &[f64]) -> Result<(Vec<f64>, MlpTrace)> {
    if x.len() != spec.input_dim() {
        return Err(PgadError::shape("mlp input", spec.input_dim(), x.len()));
    }
    debug_assert_eq!(params.len(), spec.param_count());
    let mut trace = MlpTrace {
        inputs: Vec::with_capacity(spec.num_layers()),
        pre: Vec::with_capacity(spec.num_layers()),
    };
    let mut offset = 0;
    let mut current = x.to_vec();
    let last = spec.num_layers() - 1;
    for (l, w) in spec.layer_widths.windows(2).enumerate() {
        let (n_in, n_out) = (w[0], w[1]);
        let weight = &params[offset..offset + n_in * n_out];
        let bias = &params[offset + n_in * n_out..offset + n_in * n_out + n_out];
        offset += n_in * n_out + n_out;
        let pre: Vec<f64> = (0..n_out)
            .map(|o| {
                bias[o]
                    + weight[o * n_in..(o + 1) * n_in]
                        .iter()
                        .zip(&current)
                        .map(|(w, x)| w * x)
                        .sum::<f64>()
            })
            .collect();
        let out = if l == last {
            pre.clone()
        } else {
            pre.iter().map(|&p| spec.activation.apply(p)).collect()
        };
        trace.inputs.push(std::mem::replace(&mut current, out));
        trace.pre.push(pre);
    }
    Ok((current, trace))
}

/// Accumulates `d(objective)/d(params)` into `grad` and returns the gradient
/// with respect to the MLP input.
pub fn mlp_backward(
    spec: &MlpSpec,
    params: &[f64],
    trace: &MlpTrace,
    d_out: &[f64],
    grad: &mut [f64],
) -> Result<Vec<f64>> {
    if trace.pre.len() != spec.num_layers() {
        return Err(PgadError::Usage(
            "trace was not produced by a forward pass of this network".into(),
        ));
    }
    if d_out.len() != spec.output_dim() {
        return Err(PgadError::shape("mlp upstream gradient", spec.output_dim(), d_out.len()));
    }
    let mut offsets = Vec::with_capacity(spec.num_layers());
    let mut offset = 0;
    for w in spec.layer_widths.windows(2) {
        offsets.push(offset);
        offset += w[0] * w[1] + w[1];
    }
    let last = spec.num_layers() - 1;
    let mut delta = d_out.to_vec();
    for l in (0..spec.num_layers()).rev() {
        let (n_in, n_out) = (spec.layer_widths[l], spec.layer_widths[l + 1]);
        if l != last {
            for (d, &p) in delta.iter_mut().zip(&trace.pre[l]) {
                *d *= spec.activation.derivative(p);
            }
        }
        let input = &trace.inputs[l];
        let base = offsets[l];
        for o in 0..n_out {
            let d = delta[o];
            if d == 0.0 {
                continue;
            }
            let row = &mut grad[base + o * n_in..base + (o + 1) * n_in];
            for (g, x) in row.iter_mut().zip(input) {
                *g += d * x;
            }
            grad[base + n_in * n_out + o] += d;
        }
        let weight = &params[base..base + n_in * n_out];
        let mut d_in = vec![0.0; n_in];
        for o in 0..n_out {
            let d = delta[o];
            if d == 0.0 {
                continue;
            }
            for (di, w) in d_in.iter_mut().zip(&weight[o * n_in..(o + 1) * n_in]) {
                *di += d * w;
            }
        }
        delta = d_in;
    }
    Ok(delta)
}

/// Default widths: encoders `D -> hidden -> feature_dim`, fusion
/// `2 * feature_dim -> feature_dim -> feature_dim`, heads `feature_dim -> C`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub hidden: usize,
    pub feature_dim: usize,
    pub activation: Activation,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            hidden: 32,
            feature_dim: 16,
            activation: Activation::Relu,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherArch {
    pub enc_a: MlpSpec,
    pub enc_b: MlpSpec,
    pub fusion: MlpSpec,
    pub head: MlpSpec,
}

impl TeacherArch {
    pub fn from_config(dim_a: usize, dim_b: usize, num_classes: usize, cfg: &NetConfig) -> Result<Self> {
        let h = cfg.feature_dim;
        let arch = TeacherArch {
            enc_a: MlpSpec::new(vec![dim_a, cfg.hidden, h], cfg.activation)?,
            enc_b: MlpSpec::new(vec![dim_b, cfg.hidden, h], cfg.activation)?,
            fusion: MlpSpec::new(vec![2 * h, h, h], cfg.activation)?,
            head: MlpSpec::new(vec![h, num_classes], cfg.activation)?,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        for spec in [&self.enc_a, &self.enc_b, &self.fusion, &self.head] {
            spec.validate()?;
        }
        let concat = self.enc_a.output_dim() + self.enc_b.output_dim();
        if self.fusion.input_dim() != concat {
            return Err(PgadError::shape("fusion input", concat, self.fusion.input_dim()));
        }
        if self.head.input_dim() != self.fusion.output_dim() {
            return Err(PgadError::shape(
                "teacher head input",
                self.fusion.output_dim(),
                self.head.input_dim(),
            ));
        }
        if self.head.num_layers() != 1 {
            return Err(PgadError::config("head", "must be a single affine layer"));
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.fusion.output_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.head.output_dim()
    }

    fn sections(&self) -> [usize; 4] {
        [
            self.enc_a.param_count(),
            self.enc_b.param_count(),
            self.fusion.param_count(),
            self.head.param_count(),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.sections().iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentArch {
    pub enc_a: MlpSpec,
    pub head: MlpSpec,
}

impl StudentArch {
    pub fn from_config(dim_a: usize, num_classes: usize, cfg: &NetConfig) -> Result<Self> {
        let arch = StudentArch {
            enc_a: MlpSpec::new(vec![dim_a, cfg.hidden, cfg.feature_dim], cfg.activation)?,
            head: MlpSpec::new(vec![cfg.feature_dim, num_classes], cfg.activation)?,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        self.enc_a.validate()?;
        self.head.validate()?;
        if self.head.input_dim() != self.enc_a.output_dim() {
            return Err(PgadError::shape(
                "student head input",
                self.enc_a.output_dim(),
                self.head.input_dim(),
            ));
        }
        if self.head.num_layers() != 1 {
            return Err(PgadError::config("head", "must be a single affine layer"));
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.enc_a.output_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.head.output_dim()
    }

    pub fn param_count(&self) -> usize {
        self.enc_a.param_count() + self.head.param_count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherNet {
    arch: TeacherArch,
    params: ParamVector,
}

/// Everything a teacher forward pass produced, kept for `backward`.
#[derive(Debug, Clone)]
pub struct TeacherPass {
    pub h_a: Vec<f64>,
    pub h_b: Vec<f64>,
    pub fused: Vec<f64>,
    pub logits: Vec<f64>,
    param_len: usize,
    enc_a: MlpTrace,
    enc_b: MlpTrace,
    fusion: MlpTrace,
    head: MlpTrace,
}

/// Upstream gradients for a teacher pass. Empty vectors mean "no gradient".
#[derive(Debug, Clone, Default)]
pub struct TeacherUpstream {
    pub h_a: Vec<f64>,
    pub h_b: Vec<f64>,
    pub fused: Vec<f64>,
    pub logits: Vec<f64>,
}

fn split_sections<const N: usize>(params: &[f64], sizes: [usize; N]) -> [&[f64]; N] {
    let mut rest = params;
    sizes.map(|n| {
        let (head, tail) = rest.split_at(n);
        rest = tail;
        head
    })
}

fn split_sections_mut<const N: usize>(params: &mut [f64], sizes: [usize; N]) -> [&mut [f64]; N] {
    let mut rest = params;
    sizes.map(|n| {
        let (head, tail) = std::mem::take(&mut rest).split_at_mut(n);
        rest = tail;
        head
    })
}

fn check_upstream(name: &str, v: &[f64], dim: usize) -> Result<bool> {
    if v.is_empty() {
        Ok(false)
    } else if v.len() != dim {
        Err(PgadError::shape(format!("upstream gradient `{name}`"), dim, v.len()))
    } else {
        Ok(true)
    }
}

fn add_into(acc: &mut [f64], v: &[f64]) {
    acc.iter_mut().zip(v).for_each(|(a, b)| *a += b);
}

impl TeacherNet {
    pub fn new(arch: TeacherArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = rng_from_seed(derive_seed(seed, "teacher-init"));
        let mut params = Vec::with_capacity(arch.param_count());
        for spec in [&arch.enc_a, &arch.enc_b, &arch.fusion, &arch.head] {
            init_uniform(spec, &mut params, &mut rng);
        }
        Ok(TeacherNet {
            arch,
            params: ParamVector(params),
        })
    }

    pub fn from_params(arch: TeacherArch, params: ParamVector) -> Result<Self> {
        arch.validate()?;
        if params.len() != arch.param_count() {
            return Err(PgadError::shape("teacher parameters", arch.param_count(), params.len()));
        }
        Ok(TeacherNet { arch, params })
    }

    pub fn arch(&self) -> &TeacherArch {
        &self.arch
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    pub fn set_params(&mut self, params: ParamVector) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(PgadError::shape("teacher parameters", self.params.len(), params.len()));
        }
        self.params = params;
        Ok(())
    }

    /// `fused = fusion(concat(enc_a(a), enc_b(b)))`, `logits = head(fused)`.
    pub fn forward(&self, a: &[f64], b: &[f64]) -> Result<TeacherPass> {
        let [pa, pb, pf, ph] = split_sections(self.params.as_slice(), self.arch.sections());
        if a.len() != self.arch.enc_a.input_dim() {
            return Err(PgadError::shape("teacher modality A input", self.arch.enc_a.input_dim(), a.len()));
        }
        if b.len() != self.arch.enc_b.input_dim() {
            return Err(PgadError::shape("teacher modality B input", self.arch.enc_b.input_dim(), b.len()));
        }
        let (h_a, enc_a) = mlp_forward(&self.arch.enc_a, pa, a)?;
        let (h_b, enc_b) = mlp_forward(&self.arch.enc_b, pb, b)?;
        let concat: Vec<f64> = h_a.iter().chain(&h_b).copied().collect();
        let (fused, fusion) = mlp_forward(&self.arch.fusion, pf, &concat)?;
        let (logits, head) = mlp_forward(&self.arch.head, ph, &fused)?;
        Ok(TeacherPass {
            h_a,
            h_b,
            fused,
            logits,
            param_len: self.params.len(),
            enc_a,
            enc_b,
            fusion,
            head,
        })
    }

    pub fn zero_grad(&self) -> ParamVector {
        ParamVector::zeros(self.params.len())
    }

    /// Accumulates the parameter gradient for one pass into `grad`.
    pub fn backward(&self, pass: &TeacherPass, up: &TeacherUpstream, grad: &mut ParamVector) -> Result<()> {
        if pass.param_len != self.params.len() {
            return Err(PgadError::Usage(
                "teacher backward called with a pass from a different network".into(),
            ));
        }
        if grad.len() != self.params.len() {
            return Err(PgadError::shape("teacher gradient buffer", self.params.len(), grad.len()));
        }
        let h = self.arch.feature_dim();
        let has_logits = check_upstream("logits", &up.logits, self.arch.num_classes())?;
        let has_fused = check_upstream("fused", &up.fused, h)?;
        let has_ha = check_upstream("h_a", &up.h_a, self.arch.enc_a.output_dim())?;
        let has_hb = check_upstream("h_b", &up.h_b, self.arch.enc_b.output_dim())?;

        let sizes = self.arch.sections();
        let [pa, pb, pf, ph] = split_sections(self.params.as_slice(), sizes);
        let [ga, gb, gf, gh] = split_sections_mut(grad.as_mut_slice(), sizes);

        let mut d_fused = vec![0.0; h];
        if has_logits {
            let d = mlp_backward(&self.arch.head, ph, &pass.head, &up.logits, gh)?;
            add_into(&mut d_fused, &d);
        }
        if has_fused {
            add_into(&mut d_fused, &up.fused);
        }
        let mut d_ha = vec![0.0; self.arch.enc_a.output_dim()];
        let mut d_hb = vec![0.0; self.arch.enc_b.output_dim()];
        if has_logits || has_fused {
            let d_concat = mlp_backward(&self.arch.fusion, pf, &pass.fusion, &d_fused, gf)?;
            let (da, db) = d_concat.split_at(d_ha.len());
            add_into(&mut d_ha, da);
            add_into(&mut d_hb, db);
        }
        if has_ha {
            add_into(&mut d_ha, &up.h_a);
        }
        if has_hb {
            add_into(&mut d_hb, &up.h_b);
        }
        mlp_backward(&self.arch.enc_a, pa, &pass.enc_a, &d_ha, ga)?;
        mlp_backward(&self.arch.enc_b, pb, &pass.enc_b, &d_hb, gb)?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_checkpoint(path, &CheckpointHeader::Teacher(self.arch.clone()), &self.params)
    }

    pub fn load(path: &Path) -> Result<Self> {
        match read_checkpoint(path)? {
            (CheckpointHeader::Teacher(arch), params) => TeacherNet::from_params(arch, params),
            _ => Err(PgadError::Format {
                path: path.to_path_buf(),
                message: "checkpoint holds a student, not a teacher".into(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudentNet {
    arch: StudentArch,
    params: ParamVector,
}

#[derive(Debug, Clone)]
pub struct StudentPass {
    pub feat: Vec<f64>,
    pub logits: Vec<f64>,
    param_len: usize,
    enc_a: MlpTrace,
    head: MlpTrace,
}

#[derive(Debug, Clone, Default)]
pub struct StudentUpstream {
    pub feat: Vec<f64>,
    pub logits: Vec<f64>,
}

impl StudentNet {
    pub fn new(arch: StudentArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = rng_from_seed(derive_seed(seed, "student-init"));
        let mut params = Vec::with_capacity(arch.param_count());
        init_uniform(&arch.enc_a, &mut params, &mut rng);
        init_uniform(&arch.head, &mut params, &mut rng);
        Ok(StudentNet {
            arch,
            params: ParamVector(params),
        })
    }

    pub fn from_params(arch: StudentArch, params: ParamVector) -> Result<Self> {
        arch.validate()?;
        if params.len() != arch.param_count() {
            return Err(PgadError::shape("student parameters", arch.param_count(), params.len()));
        }
        Ok(StudentNet { arch, params })
    }

    pub fn arch(&self) -> &StudentArch {
        &self.arch
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    pub fn set_params(&mut self, params: ParamVector) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(PgadError::shape("student parameters", self.params.len(), params.len()));
        }
        self.params = params;
        Ok(())
    }

    pub fn forward(&self, a: &[f64]) -> Result<StudentPass> {
        let sizes = [self.arch.enc_a.param_count(), self.arch.head.param_count()];
        let [pa, ph] = split_sections(self.params.as_slice(), sizes);
        if a.len() != self.arch.enc_a.input_dim() {
            return Err(PgadError::shape("student modality A input", self.arch.enc_a.input_dim(), a.len()));
        }
        let (feat, enc_a) = mlp_forward(&self.arch.enc_a, pa, a)?;
        let (logits, head) = mlp_forward(&self.arch.head, ph, &feat)?;
        Ok(StudentPass {
            feat,
            logits,
            param_len: self.params.len(),
            enc_a,
            head,
        })
    }

    pub fn zero_grad(&self) -> ParamVector {
        ParamVector::zeros(self.params.len())
    }

    pub fn backward(&self, pass: &StudentPass, up: &StudentUpstream, grad: &mut ParamVector) -> Result<()> {
        if pass.param_len != self.params.len() {
            return Err(PgadError::Usage(
                "student backward called with a pass from a different network".into(),
            ));
        }
        if grad.len() != self.params.len() {
            return Err(PgadError::shape("student gradient buffer", self.params.len(), grad.len()));
        }
        let h = self.arch.feature_dim();
        let has_logits = check_upstream("logits", &up.logits, self.arch.num_classes())?;
        let has_feat = check_upstream("feat", &up.feat, h)?;
        let sizes = [self.arch.enc_a.param_count(), self.arch.head.param_count()];
        let [pa, ph] = split_sections(self.params.as_slice(), sizes);
        let [ga, gh] = split_sections_mut(grad.as_mut_slice(), sizes);
        let mut d_feat = vec![0.0; h];
        if has_logits {
            let d = mlp_backward(&self.arch.head, ph, &pass.head, &up.logits, gh)?;
            add_into(&mut d_feat, &d);
        }
        if has_feat {
            add_into(&mut d_feat, &up.feat);
        }
        mlp_backward(&self.arch.enc_a, pa, &pass.enc_a, &d_feat, ga)?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_checkpoint(path, &CheckpointHeader::Student(self.arch.clone()), &self.params)
    }

    pub fn load(path: &Path) -> Result<Self> {
        match read_checkpoint(path)? {
            (CheckpointHeader::Student(arch), params) => StudentNet::from_params(arch, params),
            _ => Err(PgadError::Format {
                path: path.to_path_buf(),
                message: "checkpoint holds a teacher, not a student".into(),
            }),
        }
    }
}

/// Builds a teacher/student pair whose feature dimensions agree.
pub fn build_pair(
    dim_a: usize,
    dim_b: usize,
    num_classes: usize,
    cfg: &NetConfig,
    seed: u64,
) -> Result<(TeacherNet, StudentNet)> {
    let teacher = TeacherNet::new(TeacherArch::from_config(dim_a, dim_b, num_classes, cfg)?, seed)?;
    let student = StudentNet::new(StudentArch::from_config(dim_a, num_classes, cfg)?, seed)?;
    check_compatible(&teacher, &student)?;
    Ok((teacher, student))
}

pub fn check_compatible(teacher: &TeacherNet, student: &StudentNet) -> Result<()> {
    if teacher.arch.feature_dim() != student.arch.feature_dim() {
        return Err(PgadError::shape(
            "student feature dimension (must equal teacher fused dimension)",
            teacher.arch.feature_dim(),
            student.arch.feature_dim(),
        ));
    }
    if teacher.arch.num_classes() != student.arch.num_classes() {
        return Err(PgadError::shape(
            "student class count",
            teacher.arch.num_classes(),
            student.arch.num_classes(),
        ));
    }
    if teacher.arch.enc_a.input_dim() != student.arch.enc_a.input_dim() {
        return Err(PgadError::shape(
            "student modality A input",
            teacher.arch.enc_a.input_dim(),
            student.arch.enc_a.input_dim(),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CheckpointHeader {
    Teacher(TeacherArch),
    Student(StudentArch),
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"PGADCKPT";
const CHECKPOINT_VERSION: u32 = 1;

/// Binary checkpoint layout (all integers little-endian):
///
/// ```text
/// magic "PGADCKPT" | version u32 | header_len u32 | header JSON (arch specs)
/// | param_count u64 | param_count x f64
/// ```
pub fn write_checkpoint(path: &Path, header: &CheckpointHeader, params: &ParamVector) -> Result<()> {
    let header_json = serde_json::to_vec(header)?;
    let mut buf = Vec::with_capacity(24 + header_json.len() + 8 * params.len());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header_json);
    buf.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params.as_slice() {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    std::fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<(CheckpointHeader, ParamVector)> {
    let bad = |message: &str| PgadError::Format {
        path: path.to_path_buf(),
        message: message.into(),
    };
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    let take = |buf: &[u8], at: usize, n: usize| -> Result<Vec<u8>> {
        buf.get(at..at + n)
            .map(<[u8]>::to_vec)
            .ok_or_else(|| bad("truncated checkpoint"))
    };
    if take(&buf, 0, 8)? != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(take(&buf, 8, 4)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(bad("unsupported checkpoint version"));
    }
    let header_len = u32::from_le_bytes(take(&buf, 12, 4)?.try_into().unwrap()) as usize;
    let header: CheckpointHeader = serde_json::from_slice(&take(&buf, 16, header_len)?)?;
    let at = 16 + header_len;
    let count = u64::from_le_bytes(take(&buf, at, 8)?.try_into().unwrap()) as usize;
    let raw = take(&buf, at + 8, count * 8)?;
    if buf.len() != at + 8 + count * 8 {
        return Err(bad("trailing bytes after parameters"));
    }
    let params = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header, ParamVector(params)))
}
