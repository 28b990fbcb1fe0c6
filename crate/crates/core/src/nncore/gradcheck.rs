//! Central-difference verification of `Network::backward`.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::batchnorm::Mode;
use super::network::Network;
use super::tensor::Tensor4;
use crate::error::{Error, Result};

/// Loss on the network output, returning the loss and `dL/d(output)`.
pub type LossFn<'a> = dyn Fn(&Tensor4) -> Result<(f64, Tensor4)> + 'a;

#[derive(Debug, Clone, Serialize)]
pub struct BlockError {
    pub name: String,
    pub coords_checked: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockError>,
    pub global_max: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    /// Coordinates probed per block; blocks this small or smaller are checked exhaustively.
    pub coords_per_block: usize,
    pub seed: u64,
    /// Multiplier injected into every conv backward output. 1.0 for a real check.
    pub conv_backward_scale: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            coords_per_block: 32,
            seed: 0,
            conv_backward_scale: 1.0,
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

pub fn grad_check(net: &Network, x: &Tensor4, loss_fn: &LossFn, epsilon: f64) -> Result<GradCheckReport> {
    grad_check_with(
        net,
        x,
        loss_fn,
        &GradCheckOptions {
            epsilon,
            ..GradCheckOptions::default()
        },
    )
}

pub fn grad_check_with(net: &Network, x: &Tensor4, loss_fn: &LossFn, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    if !(1e-7..=1e-3).contains(&opts.epsilon) {
        return Err(Error::Config(format!("epsilon {} outside [1e-7, 1e-3]", opts.epsilon)));
    }
    if opts.coords_per_block < 32 {
        return Err(Error::Config("gradient check needs at least 32 coordinates per block".into()));
    }
    let pass = net.forward(x, Mode::Train)?;
    let (_, dout) = loss_fn(&pass.output)?;
    let grads = net.backward_scaled(&pass, &dout, opts.conv_backward_scale)?;
    drop(pass);

    let loss_at = |probe: &Network| -> Result<f64> {
        let out = probe.forward(x, Mode::Train)?.output;
        Ok(loss_fn(&out)?.0)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut probe = net.clone();
    let mut blocks = Vec::new();
    for (b, (name, analytic)) in grads.trainable().into_iter().enumerate() {
        let len = analytic.len();
        let coords: Vec<usize> = if len <= opts.coords_per_block {
            (0..len).collect()
        } else {
            let mut c = sample(&mut rng, len, opts.coords_per_block).into_vec();
            c.sort_unstable();
            c
        };
        let mut worst = 0.0f64;
        for &j in &coords {
            let original = probe.params.trainable_mut()[b][j];
            probe.params.trainable_mut()[b][j] = original + opts.epsilon;
            let plus = loss_at(&probe)?;
            probe.params.trainable_mut()[b][j] = original - opts.epsilon;
            let minus = loss_at(&probe)?;
            probe.params.trainable_mut()[b][j] = original;
            let numeric = (plus - minus) / (2.0 * opts.epsilon);
            worst = worst.max(relative_error(analytic[j], numeric));
        }
        blocks.push(BlockError {
            name,
            coords_checked: coords.len(),
            max_rel_error: worst,
        });
    }
    let global_max = blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        blocks,
        global_max,
        epsilon: opts.epsilon,
    })
}
