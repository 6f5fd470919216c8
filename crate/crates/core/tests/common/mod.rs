use pwconv::cloud::{FeatureMap, PointCloud, Vec3};
use pwconv::pointconv::{ConvParams, Geometry};

/// Quadratic reference: every pair is tested directly.
pub fn brute_forward(
    cloud: &PointCloud,
    feats: &FeatureMap<f64>,
    params: &ConvParams<f64>,
    radius: f64,
    res: usize,
    geometry: Geometry,
) -> FeatureMap<f64> {
    let n = cloud.len();
    let c_in = feats.channels();
    let k = res * res * res;
    let width = 2.0 * radius / res as f64;
    let mut out = FeatureMap::zeros(n, params.c_out);
    for i in 0..n {
        let pi = cloud.position(i);
        let mut sums = vec![0.0; k * c_in];
        let mut counts = vec![0usize; k];
        for j in 0..n {
            let pj = cloud.position(j);
            let d: Vec3 = [pj[0] - pi[0], pj[1] - pi[1], pj[2] - pi[2]];
            let inside = match geometry {
                Geometry::Ball => d[0] * d[0] + d[1] * d[1] + d[2] * d[2] <= radius * radius,
                Geometry::Cube => d.iter().all(|v| v.abs() <= radius),
            };
            if !inside {
                continue;
            }
            let idx = |v: f64| (((v + radius) / width).floor().max(0.0) as usize).min(res - 1);
            let cell = (idx(d[0]) * res + idx(d[1])) * res + idx(d[2]);
            counts[cell] += 1;
            for c in 0..c_in {
                sums[cell * c_in + c] += feats.get(j, c);
            }
        }
        for o in 0..params.c_out {
            let mut acc = params.bias[o];
            for cell in 0..k {
                if counts[cell] == 0 {
                    continue;
                }
                for c in 0..c_in {
                    acc += params.weight(o, c, cell) * sums[cell * c_in + c] / counts[cell] as f64;
                }
            }
            out.set(i, o, acc);
        }
    }
    out
}
