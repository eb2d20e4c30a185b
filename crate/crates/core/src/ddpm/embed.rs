/// Width of [`sinusoidal_features`].
pub const EMBED_DIM: usize = 9;

/// `[r, sin(pi r), cos(pi r), sin(2 pi r), cos(2 pi r), ..., sin(8 pi r), cos(8 pi r)]`
/// for a ratio `r` in `[0, 1]` (diffusion step `k / K`, or slot `n / N_T`).
pub fn sinusoidal_features(ratio: f64) -> [f64; EMBED_DIM] {
    let mut out = [0.0; EMBED_DIM];
    out[0] = ratio;
    for j in 0..4 {
        let arg = std::f64::consts::PI * (1u32 << j) as f64 * ratio;
        out[1 + 2 * j] = arg.sin();
        out[2 + 2 * j] = arg.cos();
    }
    out
}
