//! Central-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Bound, NnError, ParamStore, Tape, Var};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Gradients smaller than this are compared absolutely.
    pub floor: f64,
    /// Entries probed per tensor; `None` probes all of them.
    pub max_per_tensor: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-6,
            floor: 1e-3,
            max_per_tensor: Some(24),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

fn eval<F>(store: &ParamStore, f: &F) -> Result<f64, NnError>
where
    F: Fn(&mut Tape, &Bound) -> Result<Var, NnError>,
{
    let mut tape = Tape::new();
    let p = store.bind(&mut tape)?;
    let out = f(&mut tape, &p)?;
    Ok(tape.value(out).item())
}

/// Compares the analytic gradient of the scalar produced by `f` with central
/// differences for (a sample of) every parameter entry.
pub fn check_gradients<F>(
    store: &ParamStore,
    f: F,
    opts: GradCheckOptions,
) -> Result<GradCheckReport, NnError>
where
    F: Fn(&mut Tape, &Bound) -> Result<Var, NnError>,
{
    let mut tape = Tape::new();
    let p = store.bind(&mut tape)?;
    let out = f(&mut tape, &p)?;
    let grads = tape.backward(out)?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut probe = store.clone();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        checked: 0,
    };
    for (id, (name, t)) in store.iter().enumerate() {
        let analytic = grads.wrt(p.0[id], &tape);
        let entries: Vec<usize> = match opts.max_per_tensor {
            Some(k) if k < t.len() => sample(&mut rng, t.len(), k).into_vec(),
            _ => (0..t.len()).collect(),
        };
        for e in entries {
            let orig = t.data[e];
            probe.tensors_mut()[id].data[e] = orig + opts.step;
            let fp = eval(&probe, &f)?;
            probe.tensors_mut()[id].data[e] = orig - opts.step;
            let fm = eval(&probe, &f)?;
            probe.tensors_mut()[id].data[e] = orig;
            let numeric = (fp - fm) / (2.0 * opts.step);
            let a = analytic.data[e];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
            report.checked += 1;
            if report.worst.is_none() || rel > report.max_rel_err {
                report.max_rel_err = rel.max(report.max_rel_err);
                report.worst = Some((name.to_string(), e));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Dense, Mlp, Tensor};

    #[test]
    fn dense_and_activations_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let mlp = Mlp::new(
            &mut store,
            "m",
            &[3, 6, 6, 2],
            Activation::Swish,
            Activation::Sigmoid,
            &mut rng,
        )
        .unwrap();
        let gate = Dense::new(&mut store, "g", 3, 2, false, &mut rng);
        let x = Tensor::matrix(4, 3, (0..12).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let target = Tensor::matrix(4, 2, (0..8).map(|i| (i as f64).cos()).collect()).unwrap();
        let report = check_gradients(
            &store,
            |tape, p| {
                let xv = tape.leaf(x.clone())?;
                let y = mlp.forward(tape, p, xv)?;
                let g = gate.forward(tape, p, xv)?;
                let z = tape.mul(y, g)?;
                let z = tape.sub(z, y)?;
                tape.weighted_sq_err(z, target.clone(), vec![0.9, 0.1])
            },
            GradCheckOptions {
                max_per_tensor: None,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(report.checked > 50);
        assert!(report.max_rel_err < 1e-4, "{report:?}");
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // A function whose value is not what the tape differentiates: the
        // probe store sees a different objective than the analytic pass.
        let mut store = ParamStore::new();
        store.add("p", Tensor::new(vec![1, 1], vec![1.0]).unwrap());
        let calls = std::cell::Cell::new(0);
        let report = check_gradients(
            &store,
            |tape, p| {
                calls.set(calls.get() + 1);
                let c = if calls.get() == 1 { 1.0 } else { 2.0 };
                let s = tape.scale(p.0[0], c)?;
                tape.sum(s)
            },
            GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.max_rel_err > 0.4);
    }
}
