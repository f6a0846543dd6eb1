//! Channel encoder: maps an estimated channel plus the coarse region centre
//! and the SNR to the latent condition `z`.
//!
//! The channel is vectorized and linearly projected; the projection is gated
//! elementwise by a head on the Fourier-encoded region centre, an SNR head is
//! appended, and a swish MLP produces `z`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{Activation, Bound, Dense, Mlp, NnError, ParamStore, Tape, Tensor, Var};
use crate::scene::FlightRange;

/// Column-major flatten with interleaved (re, im) pairs.
pub fn vectorize_channel(h: &DMatrix<Complex64>) -> Vec<f64> {
    // nalgebra storage is column-major already
    h.iter().flat_map(|c| [c.re, c.im]).collect()
}

/// Inverse of [`vectorize_channel`] for a square `n × n` matrix.
pub fn devectorize_channel(v: &[f64], n: usize) -> Option<DMatrix<Complex64>> {
    if v.len() != 2 * n * n {
        return None;
    }
    Some(DMatrix::from_iterator(
        n,
        n,
        v.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])),
    ))
}

/// Affine map of `[lo, hi]` onto `[−1, 1]`, clamped outside the range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub lo: f64,
    pub hi: f64,
}

impl Normalizer {
    pub fn new(lo: f64, hi: f64) -> Self {
        Normalizer { lo, hi }
    }

    pub fn apply(&self, x: f64) -> f64 {
        let span = self.hi - self.lo;
        if span <= 0.0 {
            return 0.0;
        }
        (2.0 * (x - self.lo) / span - 1.0).clamp(-1.0, 1.0)
    }
}

/// Per component `x̄`: `[x̄, sin(2⁰πx̄), cos(2⁰πx̄), …, sin(2^{d−1}πx̄), cos(2^{d−1}πx̄)]`.
pub fn fourier_encode(x: &[f64], norm: &[Normalizer], d_xi: usize) -> Vec<f64> {
    assert_eq!(x.len(), norm.len(), "one normalizer per component");
    let mut out = Vec::with_capacity(x.len() * (2 * d_xi + 1));
    for (&xi, n) in x.iter().zip(norm) {
        let xb = n.apply(xi);
        out.push(xb);
        let mut freq = std::f64::consts::PI;
        for _ in 0..d_xi {
            let a = freq * xb;
            out.push(a.sin());
            out.push(a.cos());
            freq *= 2.0;
        }
    }
    out
}

pub fn fourier_len(k: usize, d_xi: usize) -> usize {
    k * (2 * d_xi + 1)
}

/// SNR in dB; an infinite (noiseless) SNR maps to `+∞` and is clamped by the
/// normalizer.
pub fn snr_db(p_snr: f64) -> f64 {
    10.0 * p_snr.log10()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedMode {
    /// Gated projection plus SNR head.
    #[default]
    Embedded,
    /// Projection only; no position or SNR side information.
    NoEmbed,
    /// The scaled channel vector is used as `z` directly.
    DirectChannel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Array size; the channel vector has length `2·n_b²`.
    pub n_b: usize,
    pub d_p: usize,
    pub d_xi: usize,
    pub head_hidden: usize,
    pub snr_out: usize,
    pub mlp_hidden: usize,
    pub mlp_layers: usize,
    pub d_z: usize,
    pub flight: FlightRange,
    pub snr_range_db: [f64; 2],
    pub mode: EmbedMode,
}

impl EncoderConfig {
    pub fn desk(n_b: usize) -> Self {
        EncoderConfig {
            n_b,
            d_p: 64,
            d_xi: 6,
            head_hidden: 64,
            snr_out: 16,
            mlp_hidden: 128,
            mlp_layers: 6,
            d_z: 64,
            flight: FlightRange::default(),
            snr_range_db: [0.0, 40.0],
            mode: EmbedMode::Embedded,
        }
    }

    pub fn full(n_b: usize) -> Self {
        EncoderConfig {
            n_b,
            d_p: 256,
            d_xi: 10,
            head_hidden: 256,
            snr_out: 64,
            mlp_hidden: 512,
            mlp_layers: 6,
            d_z: 512,
            flight: FlightRange::default(),
            snr_range_db: [0.0, 40.0],
            mode: EmbedMode::Embedded,
        }
    }

    pub fn channel_len(&self) -> usize {
        2 * self.n_b * self.n_b
    }
}

/// One conditioning sample.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderInput {
    pub h_vec: Vec<f64>,
    pub q_pre: [f64; 3],
    pub snr_db: f64,
}

/// Network inputs for a batch, already scaled and Fourier-encoded.
#[derive(Debug, Clone)]
pub struct EncoderBatch {
    pub h: Tensor,
    pub pos: Tensor,
    pub snr: Tensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub config: EncoderConfig,
    /// Channel vectors are divided by this before projection (set from the
    /// training-set RMS so inputs are of unit scale).
    pub channel_scale: f64,
    proj: Option<Dense>,
    omega_pos: Option<Mlp>,
    omega_snr: Option<Mlp>,
    mlp: Option<Mlp>,
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(
        config: EncoderConfig,
        channel_scale: f64,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        if !(channel_scale > 0.0 && channel_scale.is_finite()) {
            return Err(NnError::Shape(format!("channel scale {channel_scale} must be positive")));
        }
        if config.mlp_layers < 1 || config.n_b == 0 {
            return Err(NnError::Shape("encoder needs n_b ≥ 1 and at least one MLP layer".into()));
        }
        let mut enc = Encoder {
            config: config.clone(),
            channel_scale,
            proj: None,
            omega_pos: None,
            omega_snr: None,
            mlp: None,
        };
        if config.mode == EmbedMode::DirectChannel {
            return Ok(enc);
        }
        enc.proj = Some(Dense::new(store, "enc.proj", config.channel_len(), config.d_p, true, rng));
        let mut mlp_in = config.d_p;
        if config.mode == EmbedMode::Embedded {
            let pos_len = fourier_len(3, config.d_xi);
            let snr_len = fourier_len(1, config.d_xi);
            enc.omega_pos = Some(Mlp::new(
                store,
                "enc.omega_pos",
                &[pos_len, config.head_hidden, config.d_p],
                Activation::Swish,
                Activation::Sigmoid,
                rng,
            )?);
            enc.omega_snr = Some(Mlp::new(
                store,
                "enc.omega_snr",
                &[snr_len, config.head_hidden, config.snr_out],
                Activation::Swish,
                Activation::Identity,
                rng,
            )?);
            mlp_in += config.snr_out;
        }
        let mut widths = vec![mlp_in];
        widths.extend(std::iter::repeat_n(config.mlp_hidden, config.mlp_layers - 1));
        widths.push(config.d_z);
        enc.mlp = Some(Mlp::new(
            store,
            "enc.mlp",
            &widths,
            Activation::Swish,
            Activation::Identity,
            rng,
        )?);
        Ok(enc)
    }

    /// Width of `z`.
    pub fn out_dim(&self) -> usize {
        match self.config.mode {
            EmbedMode::DirectChannel => self.config.channel_len(),
            _ => self.config.d_z,
        }
    }

    pub fn prepare(&self, inputs: &[EncoderInput]) -> Result<EncoderBatch, NnError> {
        let c = &self.config;
        let n = inputs.len();
        let mut h = Vec::with_capacity(n * c.channel_len());
        let mut pos = Vec::with_capacity(n * fourier_len(3, c.d_xi));
        let mut snr = Vec::with_capacity(n * fourier_len(1, c.d_xi));
        let pos_norm: Vec<Normalizer> = (0..3)
            .map(|i| Normalizer::new(c.flight.lo[i], c.flight.hi[i]))
            .collect();
        let snr_norm = [Normalizer::new(c.snr_range_db[0], c.snr_range_db[1])];
        for inp in inputs {
            if inp.h_vec.len() != c.channel_len() {
                return Err(NnError::Shape(format!(
                    "channel vector of length {}, expected {}",
                    inp.h_vec.len(),
                    c.channel_len()
                )));
            }
            h.extend(inp.h_vec.iter().map(|x| x / self.channel_scale));
            pos.extend(fourier_encode(&inp.q_pre, &pos_norm, c.d_xi));
            snr.extend(fourier_encode(&[inp.snr_db], &snr_norm, c.d_xi));
        }
        Ok(EncoderBatch {
            h: Tensor::matrix(n, c.channel_len(), h)?,
            pos: Tensor::matrix(n, fourier_len(3, c.d_xi), pos)?,
            snr: Tensor::matrix(n, fourier_len(1, c.d_xi), snr)?,
        })
    }

    /// Embedded vector `h_emb` (`[B, d_p (+ snr_out)]`); for the direct
    /// mode this is the scaled channel itself.
    pub fn embed(&self, tape: &mut Tape, p: &Bound, batch: &EncoderBatch) -> Result<Var, NnError> {
        let h = tape.leaf(batch.h.clone())?;
        let Some(proj) = &self.proj else {
            return Ok(h);
        };
        let projected = proj.forward(tape, p, h)?;
        match (&self.omega_pos, &self.omega_snr) {
            (Some(op), Some(os)) => {
                let pos = tape.leaf(batch.pos.clone())?;
                let gate = op.forward(tape, p, pos)?;
                // 2·ς(·): positive and centred at one
                let gate = tape.scale(gate, 2.0)?;
                let gated = tape.mul(gate, projected)?;
                let snr = tape.leaf(batch.snr.clone())?;
                let snr_feat = os.forward(tape, p, snr)?;
                tape.concat_cols(&[gated, snr_feat])
            }
            _ => Ok(projected),
        }
    }

    /// Latent condition `z` for every sample of the batch: `[B, out_dim]`.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, batch: &EncoderBatch) -> Result<Var, NnError> {
        let emb = self.embed(tape, p, batch)?;
        match &self.mlp {
            Some(mlp) => mlp.forward(tape, p, emb),
            None => Ok(emb),
        }
    }

    /// Inference helper: `z` rows for the given inputs.
    pub fn encode(&self, store: &ParamStore, inputs: &[EncoderInput]) -> Result<Tensor, NnError> {
        let batch = self.prepare(inputs)?;
        let mut tape = Tape::new();
        let p = store.bind(&mut tape)?;
        let z = self.forward(&mut tape, &p, &batch)?;
        Ok(tape.value(z).clone())
    }

    /// The gating head, for tests and diagnostics.
    pub fn omega_pos(&self) -> Option<&Mlp> {
        self.omega_pos.as_ref()
    }

    pub fn projection(&self) -> Option<&Dense> {
        self.proj.as_ref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{check_gradients, GradCheckOptions};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_config(mode: EmbedMode) -> EncoderConfig {
        EncoderConfig {
            n_b: 2,
            d_p: 6,
            d_xi: 3,
            head_hidden: 5,
            snr_out: 3,
            mlp_hidden: 7,
            mlp_layers: 6,
            d_z: 4,
            flight: FlightRange::default(),
            snr_range_db: [0.0, 40.0],
            mode,
        }
    }

    fn inputs(rng: &mut ChaCha8Rng, n: usize) -> Vec<EncoderInput> {
        (0..n)
            .map(|_| EncoderInput {
                h_vec: (0..8).map(|_| rng.random_range(-1.0..1.0)).collect(),
                q_pre: [
                    rng.random_range(10.0..30.0),
                    rng.random_range(10.0..30.0),
                    rng.random_range(10.0..20.0),
                ],
                snr_db: rng.random_range(-5.0..45.0),
            })
            .collect()
    }

    #[test]
    fn vectorize_small_cases_and_roundtrip() {
        let h = DMatrix::from_element(1, 1, Complex64::new(1.5, -2.0));
        assert_eq!(vectorize_channel(&h), vec![1.5, -2.0]);
        assert!(vectorize_channel(&DMatrix::zeros(3, 3)).iter().all(|x| *x == 0.0));
        // column-major: entry (1,0) precedes (0,1)
        let h = DMatrix::from_row_slice(
            2,
            2,
            &[
                Complex64::new(1.0, 2.0),
                Complex64::new(3.0, 4.0),
                Complex64::new(5.0, 6.0),
                Complex64::new(7.0, 8.0),
            ],
        );
        let v = vectorize_channel(&h);
        assert_eq!(v, vec![1.0, 2.0, 5.0, 6.0, 3.0, 4.0, 7.0, 8.0]);
        assert_eq!(devectorize_channel(&v, 2).unwrap(), h);
        assert!(devectorize_channel(&v, 3).is_none());
    }

    #[test]
    fn fourier_lengths_and_values() {
        let norm = [Normalizer::new(-1.0, 1.0); 3];
        let e = fourier_encode(&[0.2, -0.4, 0.9], &norm, 10);
        assert_eq!(e.len(), 63);
        assert_eq!(e.len(), fourier_len(3, 10));
        assert!(e.iter().all(|x| (-1.0..=1.0).contains(x)));
        let z = fourier_encode(&[0.0], &norm[..1], 4);
        assert_eq!(z[0], 0.0);
        for k in 0..4 {
            assert_eq!(z[1 + 2 * k], 0.0);
            assert_eq!(z[2 + 2 * k], 1.0);
        }
        for k in 1..6 {
            for d in 0..5 {
                assert_eq!(fourier_encode(&vec![0.3; k], &vec![norm[0]; k], d).len(), k * (2 * d + 1));
            }
        }
    }

    #[test]
    fn normalizer_maps_range_and_clamps() {
        let n = Normalizer::new(0.0, 40.0);
        assert_eq!(n.apply(0.0), -1.0);
        assert_eq!(n.apply(20.0), 0.0);
        assert_eq!(n.apply(40.0), 1.0);
        assert_eq!(n.apply(f64::INFINITY), 1.0);
        assert_eq!(n.apply(-100.0), -1.0);
        assert_eq!(snr_db(100.0), 20.0);
    }

    #[test]
    fn identity_gate_passes_projection_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let enc = Encoder::new(small_config(EmbedMode::Embedded), 1.0, &mut store, &mut rng).unwrap();
        // zero last layer of ω₁ → gate 2·ς(0) = 1
        let last = *enc.omega_pos().unwrap().layers.last().unwrap();
        store.get_mut(last.w).data.fill(0.0);
        let batch = enc.prepare(&inputs(&mut rng, 3)).unwrap();
        let mut tape = Tape::new();
        let p = store.bind(&mut tape).unwrap();
        let emb = enc.embed(&mut tape, &p, &batch).unwrap();
        let h = tape.leaf(batch.h.clone()).unwrap();
        let proj = enc.projection().unwrap().forward(&mut tape, &p, h).unwrap();
        let d_p = 6;
        let emb_v = tape.value(emb).clone();
        let proj_v = tape.value(proj).clone();
        for r in 0..3 {
            assert_eq!(&emb_v.row(r)[..d_p], proj_v.row(r));
        }
    }

    #[test]
    fn zero_channel_gives_zero_first_block() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let enc = Encoder::new(small_config(EmbedMode::Embedded), 1.0, &mut store, &mut rng).unwrap();
        let mut inp = inputs(&mut rng, 4);
        for i in &mut inp {
            i.h_vec.fill(0.0);
        }
        let batch = enc.prepare(&inp).unwrap();
        let mut tape = Tape::new();
        let p = store.bind(&mut tape).unwrap();
        let emb = enc.embed(&mut tape, &p, &batch).unwrap();
        let v = tape.value(emb);
        for r in 0..4 {
            assert!(v.row(r)[..6].iter().all(|x| *x == 0.0));
        }
    }

    #[test]
    fn position_changes_embedding() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let enc = Encoder::new(small_config(EmbedMode::Embedded), 1.0, &mut store, &mut rng).unwrap();
        let mut inp = inputs(&mut rng, 1);
        let z1 = enc.encode(&store, &inp).unwrap();
        let z1b = enc.encode(&store, &inp).unwrap();
        assert_eq!(z1, z1b);
        inp[0].q_pre[0] += 1.0;
        let z2 = enc.encode(&store, &inp).unwrap();
        let diff: f64 = z1.data.iter().zip(&z2.data).map(|(a, b)| (a - b).abs()).sum();
        assert!(diff > 1e-6);
        assert_eq!(z1.shape, vec![1, 4]);
    }

    #[test]
    fn ablation_modes_have_expected_widths() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (mode, width) in [
            (EmbedMode::Embedded, 4),
            (EmbedMode::NoEmbed, 4),
            (EmbedMode::DirectChannel, 8),
        ] {
            let mut store = ParamStore::new();
            let enc = Encoder::new(small_config(mode), 2.0, &mut store, &mut rng).unwrap();
            let inp = inputs(&mut rng, 2);
            let z = enc.encode(&store, &inp).unwrap();
            assert_eq!(z.shape, vec![2, width]);
            assert_eq!(enc.out_dim(), width);
            if mode == EmbedMode::DirectChannel {
                assert!(store.is_empty());
                assert_eq!(z.data[0], inp[0].h_vec[0] / 2.0);
            }
        }
    }

    #[test]
    fn encoder_gradients_pass_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let enc = Encoder::new(small_config(EmbedMode::Embedded), 1.0, &mut store, &mut rng).unwrap();
        let batch = enc.prepare(&inputs(&mut rng, 3)).unwrap();
        let target = Tensor::matrix(3, 4, (0..12).map(|i| (i as f64 * 0.7).sin()).collect()).unwrap();
        let report = check_gradients(
            &store,
            |tape, p| {
                let z = enc.forward(tape, p, &batch)?;
                tape.weighted_sq_err(z, target.clone(), vec![1.0; 4])
            },
            GradCheckOptions {
                max_per_tensor: None,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-4, "{report:?}");
    }
}
