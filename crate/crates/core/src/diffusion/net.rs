use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Point5;
use crate::nn::{Bound, Dense, NnError, ParamStore, Tape, Tensor, Var};

/// Width of the diffusion-step features `[s̄, sin s̄, cos s̄, sin 2s̄, cos 2s̄]`.
pub const STEP_FEATURES: usize = 5;

pub fn step_features(s: usize, steps: usize) -> [f64; STEP_FEATURES] {
    let t = s as f64 / steps as f64;
    [t, t.sin(), t.cos(), (2.0 * t).sin(), (2.0 * t).cos()]
}

/// `η' = (W₁η + b₁) ⊙ ς(W₂c + b₂) + W₃c` with context `c = [step features; z]`.
///
/// `W₂` and `W₃` are stored as separate step and latent blocks so the latent
/// part is computed once per cloud and broadcast to its points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConcatSquash {
    pub main: Dense,
    pub gate_step: Dense,
    pub gate_z: Option<Dense>,
    pub shift_step: Dense,
    pub shift_z: Option<Dense>,
}

impl ConcatSquash {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        d_z: usize,
        rng: &mut R,
    ) -> Self {
        let z_block = |store: &mut ParamStore, tag: &str, rng: &mut R| {
            (d_z > 0).then(|| Dense::new(store, &format!("{name}.{tag}"), d_z, out_dim, false, rng))
        };
        ConcatSquash {
            main: Dense::new(store, &format!("{name}.main"), in_dim, out_dim, true, rng),
            gate_step: Dense::new(store, &format!("{name}.gate_s"), STEP_FEATURES, out_dim, true, rng),
            gate_z: z_block(store, "gate_z", rng),
            shift_step: Dense::new(store, &format!("{name}.shift_s"), STEP_FEATURES, out_dim, false, rng),
            shift_z: z_block(store, "shift_z", rng),
        }
    }

    /// `x: [N, in]`, `t: [N, 5]`, `z: [B, d_z]`; `cloud_of[i]` names the
    /// cloud (row of `z`) of point `i`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        p: &Bound,
        x: Var,
        t: Var,
        z: Option<Var>,
        cloud_of: &[usize],
    ) -> Result<Var, NnError> {
        let h = self.main.forward(tape, p, x)?;
        let mut gate = self.gate_step.forward(tape, p, t)?;
        let mut shift = self.shift_step.forward(tape, p, t)?;
        if let (Some(z), Some(gz), Some(sz)) = (z, &self.gate_z, &self.shift_z) {
            let g = gz.forward(tape, p, z)?;
            let g = tape.gather_rows(g, cloud_of.to_vec())?;
            gate = tape.add(gate, g)?;
            let s = sz.forward(tape, p, z)?;
            let s = tape.gather_rows(s, cloud_of.to_vec())?;
            shift = tape.add(shift, s)?;
        }
        let gate = tape.sigmoid(gate)?;
        let y = tape.mul(h, gate)?;
        tape.add(y, shift)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    /// Layer widths from input (5) to output (5).
    pub widths: Vec<usize>,
    pub d_z: usize,
}

impl NetConfig {
    pub fn desk(d_z: usize) -> Self {
        NetConfig {
            widths: vec![5, 32, 64, 128, 128, 64, 32, 5],
            d_z,
        }
    }

    pub fn full(d_z: usize) -> Self {
        NetConfig {
            widths: vec![5, 16, 64, 128, 256, 512, 1024, 512, 256, 128, 64, 16, 5],
            d_z,
        }
    }
}

/// Stack of ConcatSquash layers with swish between adjacent layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseNet {
    pub config: NetConfig,
    pub layers: Vec<ConcatSquash>,
}

impl NoiseNet {
    pub fn new<R: Rng + ?Sized>(
        config: NetConfig,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        let w = &config.widths;
        if w.len() < 2 || w[0] != 5 || w[w.len() - 1] != 5 || w.contains(&0) {
            return Err(NnError::Shape(format!(
                "noise net widths must run from 5 to 5, got {w:?}"
            )));
        }
        let layers = w
            .windows(2)
            .enumerate()
            .map(|(i, pair)| ConcatSquash::new(store, &format!("cs.{i}"), pair[0], pair[1], config.d_z, rng))
            .collect();
        Ok(NoiseNet { config, layers })
    }

    /// Predicted noise for points `x: [N, 5]` at step features `t: [N, 5]`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        p: &Bound,
        mut x: Var,
        t: Var,
        z: Option<Var>,
        cloud_of: &[usize],
    ) -> Result<Var, NnError> {
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(tape, p, x, t, z, cloud_of)?;
            if i != last {
                x = tape.swish(x)?;
            }
        }
        Ok(x)
    }

    /// Inference: noise predictions for points that all sit at step `s`.
    pub fn predict(
        &self,
        store: &ParamStore,
        points: &[Point5],
        s: usize,
        steps: usize,
        z: &Tensor,
        cloud_of: &[usize],
    ) -> Result<Vec<Point5>, NnError> {
        let mut tape = Tape::new();
        let p = store.bind(&mut tape)?;
        let x = tape.leaf(points_tensor(points))?;
        let feat = step_features(s, steps);
        let t = tape.leaf(Tensor::matrix(
            points.len(),
            STEP_FEATURES,
            points.iter().flat_map(|_| feat).collect(),
        )?)?;
        let zv = if self.config.d_z > 0 {
            if z.cols() != self.config.d_z {
                return Err(NnError::Shape(format!(
                    "latent width {} vs net d_z {}",
                    z.cols(),
                    self.config.d_z
                )));
            }
            Some(tape.leaf(z.clone())?)
        } else {
            None
        };
        let out = self.forward(&mut tape, &p, x, t, zv, cloud_of)?;
        Ok(tensor_points(tape.value(out)))
    }
}

pub fn points_tensor(points: &[Point5]) -> Tensor {
    Tensor {
        shape: vec![points.len(), 5],
        data: points.iter().flatten().copied().collect(),
    }
}

pub fn tensor_points(t: &Tensor) -> Vec<Point5> {
    t.data
        .chunks_exact(5)
        .map(|c| [c[0], c[1], c[2], c[3], c[4]])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{check_gradients, GradCheckOptions};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zeroed_layer_outputs_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let net = NoiseNet::new(NetConfig { widths: vec![5, 5], d_z: 3 }, &mut store, &mut rng).unwrap();
        let l = net.layers[0];
        // W₁ = 0, b₁ = 0, W₃ = 0, gate ς(b₂) = 0.5 with W₂ = 0
        for id in [l.main.w, l.shift_step.w, l.shift_z.unwrap().w, l.gate_step.w, l.gate_z.unwrap().w] {
            store.get_mut(id).data.fill(0.0);
        }
        let z = Tensor::matrix(1, 3, vec![0.3, -1.0, 2.0]).unwrap();
        let out = net
            .predict(&store, &[[0.5, -0.2, 0.1, 1.0, 2.0]; 4], 7, 10, &z, &[0; 4])
            .unwrap();
        assert!(out.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn output_depends_on_latent() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let net = NoiseNet::new(NetConfig { widths: vec![5, 8, 8, 5], d_z: 4 }, &mut store, &mut rng).unwrap();
        let z = Tensor::matrix(2, 4, vec![0.1, 0.2, 0.3, 0.4, -0.5, 0.9, 0.0, 1.2]).unwrap();
        let pts = [[0.1, 0.2, -0.3, 0.4, 0.5]; 2];
        let out = net.predict(&store, &pts, 3, 10, &z, &[0, 1]).unwrap();
        let diff: f64 = out[0].iter().zip(&out[1]).map(|(a, b)| (a - b).abs()).sum();
        assert!(diff > 1e-6);
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn rejects_bad_widths() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        assert!(NoiseNet::new(NetConfig { widths: vec![5, 8, 4], d_z: 2 }, &mut store, &mut rng).is_err());
        assert!(NoiseNet::new(NetConfig { widths: vec![5], d_z: 2 }, &mut store, &mut rng).is_err());
    }

    #[test]
    fn gradients_pass_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let net = NoiseNet::new(NetConfig { widths: vec![5, 6, 7, 5], d_z: 3 }, &mut store, &mut rng).unwrap();
        let pts: Vec<Point5> = (0..6)
            .map(|i| std::array::from_fn(|j| ((i * 5 + j) as f64 * 0.61).sin()))
            .collect();
        let x = points_tensor(&pts);
        let t = Tensor::matrix(
            6,
            5,
            (0..6).flat_map(|i| step_features(1 + 3 * i, 20)).collect(),
        )
        .unwrap();
        let z = Tensor::matrix(2, 3, vec![0.2, -0.7, 1.1, 0.5, 0.0, -0.3]).unwrap();
        let eps = Tensor::matrix(6, 5, (0..30).map(|i| (i as f64 * 1.3).cos()).collect()).unwrap();
        let cloud_of = [0, 0, 0, 1, 1, 1];
        let report = check_gradients(
            &store,
            |tape, p| {
                let xv = tape.leaf(x.clone())?;
                let tv = tape.leaf(t.clone())?;
                let zv = tape.leaf(z.clone())?;
                let out = net.forward(tape, p, xv, tv, Some(zv), &cloud_of)?;
                tape.weighted_sq_err(out, eps.clone(), vec![0.9, 0.9, 0.9, 0.1, 0.1])
            },
            GradCheckOptions {
                max_per_tensor: None,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-4, "{report:?}");
    }

    #[test]
    fn step_features_at_end_points() {
        let f = step_features(100, 100);
        assert_eq!(f[0], 1.0);
        assert_eq!(f[1], 1f64.sin());
        assert_eq!(f[4], 2f64.cos());
    }
}
