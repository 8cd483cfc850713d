// ResNet-style stream: stem conv / BN / ReLU / max-pool, then stages of
// basic residual blocks, then global average pooling.

use rand::Rng;

use super::EncoderConfig;
use crate::error::Result;
use crate::tensor::{BatchNormMode, BatchStats, ParamStore, Tensor};
use crate::Mode;

/// Batch statistics observed under a batch-norm layer during training.
#[derive(Clone, Debug)]
pub struct BnUpdate {
    pub prefix: String,
    pub stats: BatchStats,
}

pub(crate) fn init_bn(params: &mut ParamStore, prefix: &str, channels: usize) {
    params.insert_full(&format!("{prefix}.gamma"), &[channels], 1.0);
    params.insert_zeros(&format!("{prefix}.beta"), &[channels]);
    params.insert_buffer(format!("{prefix}.running_mean"), &[channels], vec![0.0; channels]);
    params.insert_buffer(format!("{prefix}.running_var"), &[channels], vec![1.0; channels]);
}

pub(crate) fn batch_norm(
    x: &Tensor,
    params: &ParamStore,
    prefix: &str,
    mode: Mode,
    eps: f64,
    updates: &mut Vec<BnUpdate>,
) -> Result<Tensor> {
    let gamma = params.get(&format!("{prefix}.gamma"))?;
    let beta = params.get(&format!("{prefix}.beta"))?;
    match mode {
        Mode::Train => {
            let (y, stats) = x.batch_norm(gamma, beta, BatchNormMode::Train, eps)?;
            if let Some(stats) = stats {
                updates.push(BnUpdate {
                    prefix: prefix.to_string(),
                    stats,
                });
            }
            Ok(y)
        }
        Mode::Eval => {
            let mean = params.buffer(&format!("{prefix}.running_mean"))?;
            let var = params.buffer(&format!("{prefix}.running_var"))?;
            Ok(x.batch_norm(gamma, beta, BatchNormMode::Eval { mean, var }, eps)?.0)
        }
    }
}

/// Folds training batch statistics into the running estimates:
/// `running = momentum * running + (1 - momentum) * batch`.
pub fn apply_bn_updates(params: &mut ParamStore, updates: &[BnUpdate], momentum: f64) -> Result<()> {
    for u in updates {
        for (name, batch) in [("running_mean", &u.stats.mean), ("running_var", &u.stats.var)] {
            let path = format!("{}.{name}", u.prefix);
            let next = params
                .buffer(&path)?
                .iter()
                .zip(batch)
                .map(|(r, b)| momentum * r + (1.0 - momentum) * b)
                .collect();
            params.set_buffer(&path, next)?;
        }
    }
    Ok(())
}

fn block_plan(cfg: &EncoderConfig) -> Vec<(String, usize, usize, usize)> {
    let mut plan = Vec::new();
    let mut in_ch = cfg.stage_widths[0];
    for (s, &width) in cfg.stage_widths.iter().enumerate() {
        for b in 0..cfg.blocks_per_stage {
            let stride = if s > 0 && b == 0 { 2 } else { 1 };
            plan.push((format!("stage{s}.block{b}"), in_ch, width, stride));
            in_ch = width;
        }
    }
    plan
}

/// Stem batch norm plus every residual block of one stream. The stem conv
/// weight itself is inserted by the caller.
pub(crate) fn init_stream(params: &mut ParamStore, prefix: &str, cfg: &EncoderConfig, rng: &mut impl Rng) {
    init_bn(params, &format!("{prefix}.stem.bn"), cfg.stage_widths[0]);
    for (name, cin, cout, stride) in block_plan(cfg) {
        let p = format!("{prefix}.{name}");
        params.insert_he(&format!("{p}.conv1.weight"), &[cout, cin, 3, 3], cin * 9, rng);
        init_bn(params, &format!("{p}.bn1"), cout);
        params.insert_he(&format!("{p}.conv2.weight"), &[cout, cout, 3, 3], cout * 9, rng);
        init_bn(params, &format!("{p}.bn2"), cout);
        if stride != 1 || cin != cout {
            params.insert_he(&format!("{p}.down.weight"), &[cout, cin, 1, 1], cin, rng);
            init_bn(params, &format!("{p}.down.bn"), cout);
        }
    }
}

pub(crate) fn stream_forward(
    input: &Tensor,
    params: &ParamStore,
    prefix: &str,
    cfg: &EncoderConfig,
    mode: Mode,
    updates: &mut Vec<BnUpdate>,
) -> Result<Tensor> {
    let eps = cfg.bn_eps;
    let stem = params.get(&format!("{prefix}.stem.weight"))?;
    let mut x = input.conv2d(stem, 2, cfg.stem_kernel / 2)?;
    x = batch_norm(&x, params, &format!("{prefix}.stem.bn"), mode, eps, updates)?.relu()?;
    x = x.max_pool2d(3, 2, 1)?;
    for (name, _, _, stride) in block_plan(cfg) {
        let p = format!("{prefix}.{name}");
        let mut out = x.conv2d(params.get(&format!("{p}.conv1.weight"))?, stride, 1)?;
        out = batch_norm(&out, params, &format!("{p}.bn1"), mode, eps, updates)?.relu()?;
        out = out.conv2d(params.get(&format!("{p}.conv2.weight"))?, 1, 1)?;
        out = batch_norm(&out, params, &format!("{p}.bn2"), mode, eps, updates)?;
        let shortcut = if params.contains(&format!("{p}.down.weight")) {
            let s = x.conv2d(params.get(&format!("{p}.down.weight"))?, stride, 0)?;
            batch_norm(&s, params, &format!("{p}.down.bn"), mode, eps, updates)?
        } else {
            x.clone()
        };
        x = out.add(&shortcut)?.relu()?;
    }
    x.global_average_pool()
}
