//! Sample generation for one search iteration.
//!
//! A layer is shrunk by moving to any grid point with no more filters and no
//! larger kernel than it has now. Removing every filter (`M = 0`) makes the
//! kernel irrelevant, so all such points count as one option.

use rand::seq::index;
use rand::Rng;

use crate::cost::CostModel;
use crate::error::{Error, Result};
use crate::supernet::{LayerChoice, NetworkSpec, SubNetChoice};

/// Strictly smaller grid points reachable from `current` in `layer`, in
/// ascending `(width, kernel)` order.
pub fn shrink_options(spec: &NetworkSpec, layer: usize, current: LayerChoice) -> Vec<LayerChoice> {
    let l = &spec.layers[layer];
    let mut out = Vec::new();
    for &m in &l.width_grid {
        if m > current.width {
            continue;
        }
        if m == 0 {
            if !current.is_removed() {
                out.push(LayerChoice::new(0, current.kernel));
            }
            continue;
        }
        for &k in &l.kernel_grid {
            if k <= current.kernel && (m, k) != (current.width, current.kernel) {
                out.push(LayerChoice::new(m, k));
            }
        }
    }
    out
}

/// The smallest grid point of `layer` reachable from `current`.
fn minimum_option(spec: &NetworkSpec, layer: usize, current: LayerChoice) -> Option<LayerChoice> {
    let opts = shrink_options(spec, layer, current);
    // Ascending order puts the smallest width first; among equal widths the
    // smallest kernel comes first.
    opts.first().copied()
}

pub fn shrinkable_layers(spec: &NetworkSpec, choice: &SubNetChoice) -> Vec<usize> {
    (0..spec.len())
        .filter(|&i| !shrink_options(spec, i, choice.layer(i)).is_empty())
        .collect()
}

/// One multi-layer coordinate-descent sample: `min(L, shrinkable)` distinct
/// layers of `prev` are shrunk at random until the total resource is at most
/// `resource(prev) - required`.
///
/// Up to `max_attempts` uniform proposals are tried. After that, one more
/// chosen layer per round is forced to its minimum. As a last resort the
/// layers with the largest individual savings are all set to their minimum.
pub fn generate_mcd_sample<R: Rng + ?Sized>(
    spec: &NetworkSpec,
    cost: &CostModel,
    prev: &SubNetChoice,
    layers_per_sample: usize,
    required: f64,
    max_attempts: usize,
    rng: &mut R,
) -> Result<SubNetChoice> {
    let prev_resource = cost.total(spec, prev)?;
    let bound = prev_resource - required;
    let shrinkable = shrinkable_layers(spec, prev);
    let picks = layers_per_sample.min(shrinkable.len());
    if picks == 0 {
        return Err(Error::Feasibility {
            attempts: 0,
            required,
        });
    }
    let options: Vec<Vec<LayerChoice>> = (0..spec.len())
        .map(|i| shrink_options(spec, i, prev.layer(i)))
        .collect();

    let mut attempts = 0;
    for forced in 0..=picks {
        for _ in 0..max_attempts {
            attempts += 1;
            let mut cand = prev.clone();
            let chosen = index::sample(rng, shrinkable.len(), picks);
            for (j, pos) in chosen.iter().enumerate() {
                let layer = shrinkable[pos];
                let opts = &options[layer];
                let pick = if j < forced {
                    opts[0]
                } else {
                    opts[rng.random_range(0..opts.len())]
                };
                cand.set(layer, pick);
            }
            if cost.total(spec, &cand)? <= bound {
                return Ok(cand);
            }
        }
    }

    let mut savings = Vec::with_capacity(shrinkable.len());
    for &layer in &shrinkable {
        let mut c = prev.clone();
        c.set(
            layer,
            minimum_option(spec, layer, prev.layer(layer)).expect("shrinkable"),
        );
        savings.push((prev_resource - cost.total(spec, &c)?, layer));
    }
    savings.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut cand = prev.clone();
    for &(_, layer) in savings.iter().take(picks) {
        cand.set(layer, options[layer][0]);
    }
    attempts += 1;
    if cost.total(spec, &cand)? <= bound {
        return Ok(cand);
    }
    Err(Error::Feasibility { attempts, required })
}

/// Single-layer coordinate descent: for each layer, the least-shrunk option
/// (largest remaining resource) that alone removes `required`. Layers that
/// cannot do so contribute nothing, so the list may be empty.
pub fn generate_scd_samples(
    spec: &NetworkSpec,
    cost: &CostModel,
    prev: &SubNetChoice,
    required: f64,
) -> Result<Vec<SubNetChoice>> {
    let bound = cost.total(spec, prev)? - required;
    let mut out = Vec::new();
    for layer in 0..spec.len() {
        let mut best: Option<(f64, SubNetChoice)> = None;
        for opt in shrink_options(spec, layer, prev.layer(layer)) {
            let mut cand = prev.clone();
            cand.set(layer, opt);
            let r = cost.total(spec, &cand)?;
            // Options ascend, so `>=` prefers wider, then larger kernels.
            if r <= bound && best.as_ref().is_none_or(|(b, _)| r >= *b) {
                best = Some((r, cand));
            }
        }
        if let Some((_, c)) = best {
            out.push(c);
        }
    }
    Ok(out)
}

/// Largest reduction any single-layer shrink of `prev` achieves.
pub fn max_scd_reduction(spec: &NetworkSpec, cost: &CostModel, prev: &SubNetChoice) -> Result<f64> {
    let base = cost.total(spec, prev)?;
    let mut best = 0.0f64;
    for layer in 0..spec.len() {
        if let Some(min) = minimum_option(spec, layer, prev.layer(layer)) {
            let mut c = prev.clone();
            c.set(layer, min);
            best = best.max(base - cost.total(spec, &c)?);
        }
    }
    Ok(best)
}

/// Largest reduction reachable by shrinking at most `layers` layers of
/// `prev`. Resources are monotone in every layer's width and kernel, so only
/// subsets set to their minimum need checking; all `C(n, layers)` subsets are
/// enumerated.
pub fn max_mcd_reduction(
    spec: &NetworkSpec,
    cost: &CostModel,
    prev: &SubNetChoice,
    layers: usize,
) -> Result<f64> {
    let base = cost.total(spec, prev)?;
    let shrinkable = shrinkable_layers(spec, prev);
    let picks = layers.min(shrinkable.len());
    let mut best = 0.0f64;
    let mut subset: Vec<usize> = (0..picks).collect();
    loop {
        let mut c = prev.clone();
        for &p in &subset {
            let layer = shrinkable[p];
            c.set(
                layer,
                minimum_option(spec, layer, prev.layer(layer)).expect("shrinkable"),
            );
        }
        best = best.max(base - cost.total(spec, &c)?);
        // Next combination in lexicographic order.
        let n = shrinkable.len();
        let Some(i) = (0..picks).rev().find(|&i| subset[i] < n - picks + i) else {
            break;
        };
        subset[i] += 1;
        for j in i + 1..picks {
            subset[j] = subset[j - 1] + 1;
        }
    }
    Ok(best)
}
