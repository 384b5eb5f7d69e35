//! Central-difference gradient check that avoids activation kinks.

use rand::Rng;
use unclip::neural::{batch_loss, loss_and_grad, LayerRole, ModelParams};

const STEPS: [f64; 3] = [1e-5, 1e-6, 1e-7];

pub struct GradCheck {
    pub checked: usize,
    /// Draws rejected because every step crossed a kink.
    pub skipped: usize,
    pub worst: f64,
    /// Layer roles that contributed at least one checked parameter.
    pub roles: Vec<LayerRole>,
}

/// Sign of every activated unit over the batch.
fn activation_signs(params: &ModelParams<f64>, degraded: &[Vec<f64>]) -> Vec<bool> {
    let mut signs = Vec::new();
    for d in degraded {
        let tape = params.forward_tape(d).unwrap();
        for (i, l) in params.layers().iter().enumerate() {
            if l.role != LayerRole::Head {
                signs.extend(tape.layer_output(i).iter().map(|&o| o > 0.0));
            }
        }
    }
    signs
}

/// Compares analytic gradients with central differences for `weights`
/// weights and `biases` biases drawn from each layer. The step is the
/// largest one whose stencil keeps every activation on the same side of
/// its kink; draws where none does are redrawn.
pub fn check_gradients(
    params: &mut ModelParams<f64>,
    clean: &[Vec<f64>],
    degraded: &[Vec<f64>],
    weights: usize,
    biases: usize,
    rng: &mut impl Rng,
) -> GradCheck {
    let (_, grad) = loss_and_grad(params, clean, degraded).unwrap();
    let layers = params.layers().to_vec();
    let mut out = GradCheck {
        checked: 0,
        skipped: 0,
        worst: 0.0,
        roles: Vec::new(),
    };
    for layer in &layers {
        for k in 0..weights + biases {
            let range = if k < weights { layer.weights.clone() } else { layer.biases.clone() };
            loop {
                let i = rng.random_range(range.clone());
                let orig = params.as_slice()[i];
                let smooth = STEPS.iter().copied().find(|&h| {
                    params.as_mut_slice()[i] = orig + h;
                    let up = activation_signs(params, degraded);
                    params.as_mut_slice()[i] = orig - h;
                    let down = activation_signs(params, degraded);
                    params.as_mut_slice()[i] = orig;
                    up == down
                });
                let Some(h) = smooth else {
                    out.skipped += 1;
                    continue;
                };
                params.as_mut_slice()[i] = orig + h;
                let up = batch_loss(params, clean, degraded).unwrap();
                params.as_mut_slice()[i] = orig - h;
                let down = batch_loss(params, clean, degraded).unwrap();
                params.as_mut_slice()[i] = orig;
                let numeric = (up - down) / (2.0 * h);
                let err = (grad[i] - numeric).abs() / grad[i].abs().max(numeric.abs()).max(1e-6);
                out.worst = out.worst.max(err);
                out.checked += 1;
                if !out.roles.contains(&layer.role) {
                    out.roles.push(layer.role);
                }
                break;
            }
        }
    }
    out
}
