//! Tree-structured feature aggregation: a recursive stack of Kronecker
//! convolution branches.
//!
//! Step i transforms the previous step's output with KConv -> BN -> ReLU and
//! the running result is the channel concatenation of the input (optionally)
//! with every step output, so features learned early stay visible to later
//! steps and to the consumer.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::batchnorm::{bn_backward, bn_forward, bn_update_running, BatchNormState, BnCache, BnMode};
use crate::error::{Error, Result};
use crate::io::{read_tensor, write_tensor};
use crate::kconv::{he_init, kconv_backward, kconv_forward_factored, ConvSpec, KernelWeights, Padding};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{concat_channels, Tensor4};

/// The small-factor branch set: (6,3), (10,7), (20,15).
pub const TFA_S_FACTORS: [(usize, usize); 3] = [(6, 3), (10, 7), (20, 15)];
/// The large-factor branch set: (10,7), (20,15), (30,25).
pub const TFA_L_FACTORS: [(usize, usize); 3] = [(10, 7), (20, 15), (30, 25)];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TfaConfig {
    /// Ordered (r1, r2) factor pairs, one per expansion step.
    pub steps: Vec<(usize, usize)>,
    /// Output channels of every branch convolution.
    pub branch_channels: usize,
    /// Half extent of the branch kernels (1 = 3x3).
    #[serde(default = "default_half_extent")]
    pub kernel_half_extent: usize,
    /// Whether the input itself joins the final concatenation.
    #[serde(default = "default_include_identity")]
    pub include_identity: bool,
}

fn default_half_extent() -> usize {
    1
}
fn default_include_identity() -> bool {
    true
}

impl TfaConfig {
    /// Branch width C/4 (floor, minimum 1) for an input of C channels.
    pub fn for_input_channels(input_channels: usize, steps: Vec<(usize, usize)>) -> Self {
        TfaConfig {
            steps,
            branch_channels: (input_channels / 4).max(1),
            kernel_half_extent: 1,
            include_identity: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps.is_empty() {
            return Err(Error::Config("tfa steps must be nonempty".into()));
        }
        for &(r1, r2) in &self.steps {
            if r1 < 1 || r2 < 1 || r2 > r1 {
                return Err(Error::Config(format!(
                    "tfa step needs 1 <= r2 <= r1, got ({r1}, {r2})"
                )));
            }
        }
        if self.branch_channels < 1 {
            return Err(Error::Config("branch_channels must be >= 1".into()));
        }
        Ok(())
    }

    /// Channels produced by the final concatenation for the given input width.
    pub fn output_channels(&self, input_channels: usize) -> usize {
        let identity = if self.include_identity { input_channels } else { 0 };
        identity + self.steps.len() * self.branch_channels
    }
}

/// One expansion step: a Kronecker convolution (no learnable bias; BN follows
/// and absorbs any offset) plus its normalization state.
#[derive(Debug, Clone)]
pub struct TfaBranch<S: Scalar> {
    pub spec: ConvSpec,
    pub weights: KernelWeights<S>,
    pub bn: BatchNormState<S>,
}

#[derive(Debug, Clone)]
pub struct TfaModule<S: Scalar> {
    pub config: TfaConfig,
    pub input_channels: usize,
    pub branches: Vec<TfaBranch<S>>,
}

pub fn tfa_build<S: Scalar>(
    rng: &mut Rng,
    input_channels: usize,
    config: TfaConfig,
) -> Result<TfaModule<S>> {
    config.validate()?;
    let mut branches = Vec::with_capacity(config.steps.len());
    let mut c_in = input_channels;
    for &(r1, r2) in &config.steps {
        let spec = ConvSpec::new(
            config.kernel_half_extent,
            r1,
            r2,
            c_in,
            config.branch_channels,
            Padding::Same,
        )?;
        let weights = he_init(rng, &spec);
        branches.push(TfaBranch {
            spec,
            weights,
            bn: BatchNormState::identity(config.branch_channels),
        });
        c_in = config.branch_channels;
    }
    Ok(TfaModule { config, input_channels, branches })
}

/// Everything backward needs, per branch: the branch input, the convolution
/// output (BN's x), the BN statistics, and the pre-ReLU activations.
pub struct TfaBranchCache<S: Scalar> {
    pub input: Tensor4<S>,
    pub conv_out: Tensor4<S>,
    pub bn_cache: BnCache,
    pub pre_relu: Tensor4<S>,
}

pub struct TfaCache<S: Scalar> {
    pub branches: Vec<TfaBranchCache<S>>,
    pub mode: BnMode,
}

fn relu<S: Scalar>(x: &Tensor4<S>) -> Tensor4<S> {
    x.map(|v| if v > S::zero() { v } else { S::zero() })
}

/// Forward pass. Pure: train-mode running-statistic updates are folded in
/// separately with [`tfa_apply_running_updates`].
pub fn tfa_forward<S: Scalar>(
    module: &TfaModule<S>,
    x: &Tensor4<S>,
    mode: BnMode,
) -> Result<(Tensor4<S>, TfaCache<S>)> {
    if x.c() != module.input_channels {
        return Err(Error::ShapeMismatch {
            context: "tfa_forward",
            detail: format!(
                "input has {} channels, module expects {}",
                x.c(),
                module.input_channels
            ),
        });
    }
    let mut caches = Vec::with_capacity(module.branches.len());
    let mut outputs: Vec<Tensor4<S>> = Vec::with_capacity(module.branches.len());
    let mut current = x.clone();
    for branch in &module.branches {
        let conv_out = kconv_forward_factored(&current, &branch.weights, &branch.spec)?;
        let (pre_relu, bn_cache) = bn_forward(&conv_out, &branch.bn, mode)?;
        let activated = relu(&pre_relu);
        caches.push(TfaBranchCache { input: current, conv_out, bn_cache, pre_relu });
        outputs.push(activated.clone());
        current = activated;
    }
    let mut parts: Vec<&Tensor4<S>> = Vec::with_capacity(outputs.len() + 1);
    if module.config.include_identity {
        parts.push(x);
    }
    parts.extend(outputs.iter());
    let y = concat_channels(&parts)?;
    Ok((y, TfaCache { branches: caches, mode }))
}

/// Folds the train-mode batch statistics of a forward pass into the running
/// statistics of every branch.
pub fn tfa_apply_running_updates<S: Scalar>(module: &mut TfaModule<S>, cache: &TfaCache<S>) {
    for (branch, bc) in module.branches.iter_mut().zip(&cache.branches) {
        bn_update_running(&mut branch.bn, &bc.bn_cache);
    }
}

/// Per-branch parameter gradients. Branch convolutions have no bias
/// parameter, so only the kernel and the BN affine pair appear.
#[derive(Debug, Clone)]
pub struct TfaBranchGrads<S: Scalar> {
    pub d_kernel: Tensor4<S>,
    pub d_gamma: Vec<S>,
    pub d_beta: Vec<S>,
}

#[derive(Debug, Clone)]
pub struct TfaGrads<S: Scalar> {
    pub branches: Vec<TfaBranchGrads<S>>,
}

/// Reverse-mode gradients through concatenation (channel slicing), ReLU, BN,
/// and the Kronecker convolutions. `dx` accumulates the identity-branch slice
/// plus the chain through the first step.
pub fn tfa_backward<S: Scalar>(
    module: &TfaModule<S>,
    cache: &TfaCache<S>,
    dy: &Tensor4<S>,
) -> Result<(Tensor4<S>, TfaGrads<S>)> {
    let n_steps = module.branches.len();
    let cb = module.config.branch_channels;
    let expected_c = module.config.output_channels(module.input_channels);
    if dy.c() != expected_c {
        return Err(Error::ShapeMismatch {
            context: "tfa_backward",
            detail: format!("dy has {} channels, forward made {expected_c}", dy.c()),
        });
    }
    let identity_c = if module.config.include_identity {
        module.input_channels
    } else {
        0
    };
    // channel block of step i's output inside dy
    let step_slice = |i: usize| -> Result<Tensor4<S>> {
        let c0 = identity_c + i * cb;
        dy.channel_slice(c0, c0 + cb)
    };

    let mut branch_grads: Vec<Option<TfaBranchGrads<S>>> = (0..n_steps).map(|_| None).collect();
    let mut upstream = step_slice(n_steps - 1)?;
    let mut dx_chain: Option<Tensor4<S>> = None;
    for i in (0..n_steps).rev() {
        let branch = &module.branches[i];
        let bc = &cache.branches[i];
        // ReLU gate
        let mut dpre = upstream.clone();
        for (g, &p) in dpre.data_mut().iter_mut().zip(bc.pre_relu.data()) {
            if p <= S::zero() {
                *g = S::zero();
            }
        }
        let (dconv, d_gamma, d_beta) = bn_backward(&bc.conv_out, &branch.bn, &bc.bn_cache, &dpre)?;
        let grads = kconv_backward(&bc.input, &branch.weights, &branch.spec, &dconv)?;
        branch_grads[i] = Some(TfaBranchGrads {
            d_kernel: grads.d_kernel,
            d_gamma,
            d_beta,
        });
        if i == 0 {
            dx_chain = Some(grads.d_input);
        } else {
            upstream = step_slice(i - 1)?.add(&grads.d_input)?;
        }
    }
    let chain = dx_chain.expect("at least one branch");
    let dx = if module.config.include_identity {
        dy.channel_slice(0, identity_c)?.add(&chain)?
    } else {
        chain
    };
    Ok((
        dx,
        TfaGrads {
            branches: branch_grads.into_iter().map(|g| g.expect("filled")).collect(),
        },
    ))
}

#[derive(Serialize, Deserialize)]
struct TfaManifest {
    input_channels: usize,
    config: TfaConfig,
    branches: Vec<TfaBranchFiles>,
}

#[derive(Serialize, Deserialize)]
struct TfaBranchFiles {
    kernel: String,
    gamma: String,
    beta: String,
    running_mean: String,
    running_var: String,
}

fn vec_to_tensor<S: Scalar>(v: &[S]) -> Tensor4<S> {
    Tensor4::from_vec(1, v.len(), 1, 1, v.to_vec()).expect("length matches")
}

fn tensor_to_vec<S: Scalar>(t: &Tensor4<S>, want: usize, what: &str) -> Result<Vec<S>> {
    if t.shape() != (1, want, 1, 1) {
        return Err(Error::ShapeMismatch {
            context: "tfa_load",
            detail: format!("{what} has shape {:?}, expected (1, {want}, 1, 1)", t.shape()),
        });
    }
    Ok(t.data().to_vec())
}

/// Writes the module as `tfa.json` plus one tensor file per stored array.
pub fn tfa_save<S: Scalar>(module: &TfaModule<S>, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut branches = Vec::new();
    for (i, b) in module.branches.iter().enumerate() {
        let files = TfaBranchFiles {
            kernel: format!("branch{i}_kernel.tkt"),
            gamma: format!("branch{i}_gamma.tkt"),
            beta: format!("branch{i}_beta.tkt"),
            running_mean: format!("branch{i}_running_mean.tkt"),
            running_var: format!("branch{i}_running_var.tkt"),
        };
        write_tensor(dir.join(&files.kernel), &b.weights.kernel)?;
        write_tensor(dir.join(&files.gamma), &vec_to_tensor(&b.bn.gamma))?;
        write_tensor(dir.join(&files.beta), &vec_to_tensor(&b.bn.beta))?;
        write_tensor(dir.join(&files.running_mean), &vec_to_tensor(&b.bn.running_mean))?;
        write_tensor(dir.join(&files.running_var), &vec_to_tensor(&b.bn.running_var))?;
        branches.push(files);
    }
    let manifest = TfaManifest {
        input_channels: module.input_channels,
        config: module.config.clone(),
        branches,
    };
    std::fs::write(dir.join("tfa.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn tfa_load<S: Scalar>(dir: impl AsRef<Path>) -> Result<TfaModule<S>> {
    let dir = dir.as_ref();
    let manifest: TfaManifest =
        serde_json::from_str(&std::fs::read_to_string(dir.join("tfa.json"))?)?;
    manifest.config.validate()?;
    if manifest.branches.len() != manifest.config.steps.len() {
        return Err(Error::Config(format!(
            "manifest lists {} branches for {} steps",
            manifest.branches.len(),
            manifest.config.steps.len()
        )));
    }
    let mut branches = Vec::new();
    let mut c_in = manifest.input_channels;
    let cb = manifest.config.branch_channels;
    for (i, files) in manifest.branches.iter().enumerate() {
        let (r1, r2) = manifest.config.steps[i];
        let spec = ConvSpec::new(
            manifest.config.kernel_half_extent,
            r1,
            r2,
            c_in,
            cb,
            Padding::Same,
        )?;
        let kernel = read_tensor::<S>(dir.join(&files.kernel))?;
        let weights = KernelWeights { kernel, bias: vec![S::zero(); cb] };
        weights.matches(&spec)?;
        let mut bn = BatchNormState::identity(cb);
        bn.gamma = tensor_to_vec(&read_tensor(dir.join(&files.gamma))?, cb, "gamma")?;
        bn.beta = tensor_to_vec(&read_tensor(dir.join(&files.beta))?, cb, "beta")?;
        bn.running_mean =
            tensor_to_vec(&read_tensor(dir.join(&files.running_mean))?, cb, "running_mean")?;
        bn.running_var =
            tensor_to_vec(&read_tensor(dir.join(&files.running_var))?, cb, "running_var")?;
        branches.push(TfaBranch { spec, weights, bn });
        c_in = cb;
    }
    Ok(TfaModule {
        config: manifest.config,
        input_channels: manifest.input_channels,
        branches,
    })
}
