//! Finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{backward, clear_grads, AdError, Value};

/// Smallest denominator used when computing relative errors.
pub const REL_FLOOR: f64 = 1e-8;

/// Compare analytic gradients against central finite differences.
///
/// `build` must reconstruct the same scalar root from the current leaf data
/// every time it is called. Up to 32 coordinates are checked, drawn without
/// replacement across all leaves (every coordinate when there are 32 or
/// fewer). Returns the largest relative error
/// `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)` seen.
pub fn grad_check<F>(build: F, leaves: &[Value], step: f64) -> Result<f64, AdError>
where
    F: Fn() -> Result<Value, AdError>,
{
    grad_check_sampled(build, leaves, step, 32, 0x5eed)
}

/// [`grad_check`] with an explicit coordinate budget and sampling seed.
pub fn grad_check_sampled<F>(
    build: F,
    leaves: &[Value],
    step: f64,
    max_coords: usize,
    seed: u64,
) -> Result<f64, AdError>
where
    F: Fn() -> Result<Value, AdError>,
{
    clear_grads(leaves);
    let root = build()?;
    backward(&root)?;
    let analytic: Vec<Vec<f64>> = leaves.iter().map(|l| l.grad()).collect();

    // Flat coordinate space over all leaves.
    let offsets: Vec<usize> = leaves
        .iter()
        .scan(0usize, |acc, l| {
            let start = *acc;
            *acc += l.len();
            Some(start)
        })
        .collect();
    let total: usize = leaves.iter().map(|l| l.len()).sum();
    let picked: Vec<usize> = if total <= max_coords {
        (0..total).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx: Vec<usize> = sample(&mut rng, total, max_coords).into_vec();
        idx.sort_unstable();
        idx
    };

    let locate = |flat: usize| -> (usize, usize) {
        let mut leaf = leaves.len() - 1;
        for (i, &off) in offsets.iter().enumerate() {
            if flat < off {
                leaf = i - 1;
                break;
            }
            leaf = i;
        }
        (leaf, flat - offsets[leaf])
    };

    let mut max_rel: f64 = 0.0;
    for flat in picked {
        let (li, ci) = locate(flat);
        let leaf = &leaves[li];
        let x0 = leaf.data()[ci];
        let eval_at = |x: f64| -> Result<f64, AdError> {
            let mut buf = leaf.data().clone();
            buf[ci] = x;
            leaf.set_data(&buf);
            let r = build()?;
            Ok(r.item())
        };
        let f_plus = eval_at(x0 + step)?;
        let f_minus = eval_at(x0 - step)?;
        {
            let mut buf = leaf.data().clone();
            buf[ci] = x0;
            leaf.set_data(&buf);
        }
        let numeric = (f_plus - f_minus) / (2.0 * step);
        let a = analytic[li][ci];
        if !numeric.is_finite() || !a.is_finite() {
            return Err(AdError::NonFinite { leaf: li, coord: ci });
        }
        let rel = (a - numeric).abs() / REL_FLOOR.max(a.abs() + numeric.abs());
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}
