//! Shared fixtures for the criterion benches.

use mdbc::data::{gen_circles, standardize, CirclesParams};
use mdbc::levelset::Labeling;
use mdbc::{GmmSpec, ModelHandle, ParamVector, PointSet};

/// Standardized two-circles sample of size `n`.
pub fn circles(n: usize, seed: u64) -> PointSet {
    let params = CirclesParams {
        n,
        ..CirclesParams::default()
    };
    let data = gen_circles(&params, seed).expect("valid circles parameters");
    standardize(&data).expect("non-degenerate sample").0.points
}

/// Equal-weight 1D pair at ±2 with unit scale.
pub fn gmm_pair() -> (ModelHandle, ParamVector) {
    let spec = GmmSpec::new(2, 1);
    let theta = spec.encode(&[0.5, 0.5], &[-2.0, 2.0], &[1.0, 1.0]);
    (ModelHandle::Gmm(spec), theta)
}

/// `t` labelings of `n` points into `k` blocks with a few boundary points moved
/// around from one labeling to the next.
pub fn labelings(n: usize, t: usize, k: u32) -> Vec<Labeling> {
    (0..t)
        .map(|s| {
            let raw: Vec<u32> = (0..n)
                .map(|i| {
                    let base = (i * k as usize / n) as u32;
                    if (i * 31 + s * 17) % 97 == 0 {
                        (base + 1) % k
                    } else {
                        base
                    }
                })
                .collect();
            Labeling::from_raw(&raw)
        })
        .collect()
}
