//! Five-point Gauss–Legendre rule, applied cell by cell.

/// Nodes on `[0, 1]`.
pub const GL5_NODES: [f64; 5] = [
    0.046_910_077_030_668_004,
    0.230_765_344_947_158_45,
    0.5,
    0.769_234_655_052_841_6,
    0.953_089_922_969_332,
];

/// Weights on `[0, 1]` (sum to one).
pub const GL5_WEIGHTS: [f64; 5] = [
    0.118_463_442_528_094_54,
    0.239_314_335_249_683_23,
    0.284_444_444_444_444_45,
    0.239_314_335_249_683_23,
    0.118_463_442_528_094_54,
];

/// `∫_a^b g` by the 5-point rule on a single cell.
pub fn gl5<F: FnMut(f64) -> f64>(a: f64, b: f64, mut g: F) -> f64 {
    let h = b - a;
    let mut acc = 0.0;
    for (x, w) in GL5_NODES.iter().zip(GL5_WEIGHTS.iter()) {
        acc += w * g(a + h * x);
    }
    acc * h
}

/// Composite 5-point rule with `cells` equal cells.
pub fn gl5_composite<F: FnMut(f64) -> f64>(a: f64, b: f64, cells: usize, mut g: F) -> f64 {
    let h = (b - a) / cells as f64;
    (0..cells)
        .map(|c| gl5(a + c as f64 * h, a + (c + 1) as f64 * h, &mut g))
        .sum()
}
