use super::FeatureMatrix;

const DELTA_WINDOW: usize = 2;

// d_t = sum_n n (c_{t+n} - c_{t-n}) / (2 sum_n n^2), edges replicated.
fn regression(input: &[f64], frames: usize, dim: usize) -> Vec<f64> {
    let norm: f64 = 2.0 * (1..=DELTA_WINDOW).map(|n| (n * n) as f64).sum::<f64>();
    let mut out = vec![0.0; frames * dim];
    let last = frames as isize - 1;
    for t in 0..frames {
        for n in 1..=DELTA_WINDOW {
            let ahead = (t as isize + n as isize).min(last) as usize;
            let behind = (t as isize - n as isize).max(0) as usize;
            for d in 0..dim {
                out[t * dim + d] += n as f64 * (input[ahead * dim + d] - input[behind * dim + d]);
            }
        }
        for v in &mut out[t * dim..(t + 1) * dim] {
            *v /= norm;
        }
    }
    out
}

/// Appends ±2-frame regression deltas and delta-deltas: `[c, Δc, ΔΔc]`.
pub fn append_deltas(statics: &FeatureMatrix) -> FeatureMatrix {
    let t = statics.num_frames();
    let d = statics.dim();
    let delta = regression(statics.data(), t, d);
    let delta2 = regression(&delta, t, d);
    let mut data = Vec::with_capacity(t * d * 3);
    for i in 0..t {
        data.extend_from_slice(statics.row(i));
        data.extend_from_slice(&delta[i * d..(i + 1) * d]);
        data.extend_from_slice(&delta2[i * d..(i + 1) * d]);
    }
    FeatureMatrix::new(statics.utt_id(), d * 3, data).expect("deltas of finite input are finite")
}
