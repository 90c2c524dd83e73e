//! Central-difference verification of reverse-mode gradients.

use crate::error::{Error, Result};
use crate::graph::{Graph, TensorData, TensorId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Outcome of a finite-difference sweep over every input element.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest relative disagreement seen.
    pub max_rel_err: f64,
    /// Number of scalar derivatives compared.
    pub checked: usize,
    /// Input tensor and element index of the worst disagreement.
    pub worst: (usize, usize),
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// |a - b| scaled by the larger magnitude. The denominator floor absorbs the
/// rounding noise a central difference carries near a zero derivative
/// (about |f|·2⁻⁵²/eps ≈ 1e-11), which would otherwise dominate the ratio;
/// a genuinely wrong adjoint still disagrees at the scale of the larger side.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-5)
}

/// Compare analytic gradients of a scalar-valued builder against central
/// differences at step `eps`. Every input element is perturbed in turn.
pub fn gradcheck<F>(inputs: &[TensorData], eps: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[TensorId]) -> Result<TensorId>,
{
    if !(1e-6..=1e-4).contains(&eps) {
        return Err(Error::config(format!(
            "finite-difference step {eps} outside the trustworthy range [1e-6, 1e-4]"
        )));
    }
    if inputs.is_empty() {
        return Err(Error::usage("gradient check needs at least one input"));
    }

    // Analytic pass: all inputs are differentiable leaves.
    let mut g = Graph::new();
    let ids: Vec<TensorId> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let loss = f(&mut g, &ids)?;
    if g.value(loss).len() != 1 {
        return Err(Error::usage(format!(
            "gradient check requires a scalar loss, got shape {:?}",
            g.shape(loss)
        )));
    }
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .zip(inputs)
        .map(|(&id, t)| {
            g.grad(id)
                .map(|s| s.to_vec())
                .unwrap_or_else(|| vec![0.0; t.data.len()])
        })
        .collect();
    drop(g);

    // Numeric loss at a perturbed point; no tape is recorded.
    let eval = |tensors: &[TensorData]| -> Result<f64> {
        let mut g = Graph::new();
        let ids: Vec<TensorId> = tensors.iter().map(|t| g.leaf(t.clone(), false)).collect();
        let loss = f(&mut g, &ids)?;
        Ok(g.value(loss)[0])
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        checked: 0,
        worst: (0, 0),
        worst_analytic: 0.0,
        worst_numeric: 0.0,
    };
    let mut work: Vec<TensorData> = inputs.to_vec();
    for (ti, t) in inputs.iter().enumerate() {
        for ei in 0..t.data.len() {
            let orig = t.data[ei];
            work[ti].data[ei] = orig + eps;
            let lp = eval(&work)?;
            work[ti].data[ei] = orig - eps;
            let lm = eval(&work)?;
            work[ti].data[ei] = orig;
            let numeric = (lp - lm) / (2.0 * eps);
            let err = relative_error(analytic[ti][ei], numeric);
            report.checked += 1;
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = (ti, ei);
                report.worst_analytic = analytic[ti][ei];
                report.worst_numeric = numeric;
            }
        }
    }
    Ok(report)
}

/// One named check in the standard sweep.
#[derive(Debug, Clone)]
pub struct SuiteEntry {
    pub name: String,
    pub report: GradCheckReport,
}

/// Finite-difference step used by the standard sweep.
pub const SUITE_EPS: f64 = 1e-5;
/// Largest relative disagreement the standard sweep tolerates.
pub const SUITE_TOL: f64 = 1e-4;

/// Sweep every differentiable primitive, the phase-attention block, and a
/// small full network. Each entry compares reverse-mode gradients against
/// central differences over every input element (the network entry samples
/// its coordinates; see [`network_gradcheck`]).
pub fn standard_suite(eps: f64) -> Result<Vec<SuiteEntry>> {
    use crate::attention;

    fn seeded(shape: &[usize], lo: f64, hi: f64, seed: u64) -> TensorData {
        let n: usize = shape.iter().product();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        TensorData::new(
            shape.to_vec(),
            (0..n).map(|_| rng.gen_range(lo..hi)).collect(),
        )
        .unwrap()
    }

    /// Values bounded away from zero so kinked activations see no crossing
    /// within the finite-difference step.
    fn offzero(shape: &[usize], seed: u64) -> TensorData {
        let mut t = seeded(shape, 0.1, 1.1, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        for v in &mut t.data {
            if rng.gen_bool(0.5) {
                *v = -*v;
            }
        }
        t
    }

    /// Reduce an arbitrary output to a scalar through a fixed random
    /// weighting, so every output element influences the loss.
    fn pin(g: &mut Graph, y: TensorId, salt: u64) -> Result<TensorId> {
        let shape = g.shape(y).to_vec();
        let n: usize = shape.iter().product();
        let mut rng = ChaCha8Rng::seed_from_u64(salt);
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let c = g.constant(TensorData::new(shape, w)?);
        let p = crate::ops::mul(g, y, c)?;
        Ok(crate::ops::sum_all(g, p))
    }

    let mut entries: Vec<SuiteEntry> = Vec::new();
    let mut push = |name: &str, report: GradCheckReport| {
        entries.push(SuiteEntry { name: name.to_string(), report });
    };

    use crate::ops;
    push(
        "add",
        gradcheck(&[seeded(&[2, 3], -1.0, 1.0, 1), seeded(&[2, 3], -1.0, 1.0, 2)], eps, |g, ids| {
            let y = ops::add(g, ids[0], ids[1])?;
            pin(g, y, 101)
        })?,
    );
    push(
        "mul",
        gradcheck(&[seeded(&[2, 3], -1.0, 1.0, 3), seeded(&[2, 3], -1.0, 1.0, 4)], eps, |g, ids| {
            let y = ops::mul(g, ids[0], ids[1])?;
            pin(g, y, 102)
        })?,
    );
    push(
        "scale",
        gradcheck(&[seeded(&[3, 4], -1.0, 1.0, 5)], eps, |g, ids| {
            let y = ops::scale(g, ids[0], -1.7);
            pin(g, y, 103)
        })?,
    );
    push(
        "relu",
        gradcheck(&[offzero(&[3, 4], 6)], eps, |g, ids| {
            let y = ops::relu(g, ids[0]);
            pin(g, y, 104)
        })?,
    );
    push(
        "sigmoid",
        gradcheck(&[seeded(&[3, 4], -2.0, 2.0, 7)], eps, |g, ids| {
            let y = ops::sigmoid(g, ids[0]);
            pin(g, y, 105)
        })?,
    );
    push(
        "matmul",
        gradcheck(&[seeded(&[3, 4], -1.0, 1.0, 8), seeded(&[4, 2], -1.0, 1.0, 9)], eps, |g, ids| {
            let y = ops::matmul(g, ids[0], ids[1])?;
            pin(g, y, 106)
        })?,
    );
    push(
        "transpose",
        gradcheck(&[seeded(&[3, 4], -1.0, 1.0, 10)], eps, |g, ids| {
            let y = ops::transpose2d(g, ids[0])?;
            pin(g, y, 107)
        })?,
    );
    push(
        "reshape",
        gradcheck(&[seeded(&[2, 6], -1.0, 1.0, 11)], eps, |g, ids| {
            let y = ops::reshape(g, ids[0], vec![3, 4])?;
            pin(g, y, 108)
        })?,
    );
    push(
        "sum",
        gradcheck(&[seeded(&[3, 4], -1.0, 1.0, 12)], eps, |g, ids| {
            Ok(ops::sum_all(g, ids[0]))
        })?,
    );
    push(
        "mean",
        gradcheck(&[seeded(&[3, 4], -1.0, 1.0, 13)], eps, |g, ids| {
            Ok(ops::mean_all(g, ids[0]))
        })?,
    );
    push(
        "sum_axis",
        gradcheck(&[seeded(&[2, 3, 2], -1.0, 1.0, 14)], eps, |g, ids| {
            let y = ops::sum_axis(g, ids[0], 1)?;
            pin(g, y, 109)
        })?,
    );
    push(
        "softmax",
        gradcheck(&[seeded(&[2, 3, 4], -2.0, 2.0, 15)], eps, |g, ids| {
            let y = ops::softmax_axis(g, ids[0], 1)?;
            pin(g, y, 110)
        })?,
    );
    push(
        "conv3x3",
        gradcheck(
            &[
                seeded(&[2, 2, 4, 4], -1.0, 1.0, 16),
                seeded(&[3, 2, 3, 3], -1.0, 1.0, 17),
                seeded(&[3], -0.5, 0.5, 18),
            ],
            eps,
            |g, ids| {
                let y = ops::conv2d(g, ids[0], ids[1], ids[2], 1, 1)?;
                pin(g, y, 111)
            },
        )?,
    );
    push(
        "conv3x3_strided",
        gradcheck(
            &[
                seeded(&[1, 2, 5, 5], -1.0, 1.0, 19),
                seeded(&[2, 2, 3, 3], -1.0, 1.0, 20),
                seeded(&[2], -0.5, 0.5, 21),
            ],
            eps,
            |g, ids| {
                let y = ops::conv2d(g, ids[0], ids[1], ids[2], 2, 1)?;
                pin(g, y, 112)
            },
        )?,
    );
    push(
        "transposed_conv",
        gradcheck(
            &[
                seeded(&[1, 2, 2, 2], -1.0, 1.0, 22),
                seeded(&[2, 3, 4, 4], -1.0, 1.0, 23),
                seeded(&[3], -0.5, 0.5, 24),
            ],
            eps,
            |g, ids| {
                let y = ops::transposed_conv2d(g, ids[0], ids[1], ids[2], 2, 1)?;
                pin(g, y, 113)
            },
        )?,
    );
    push(
        "maxpool",
        gradcheck(&[seeded(&[1, 2, 4, 4], -1.0, 1.0, 25)], eps, |g, ids| {
            let y = ops::maxpool2d(g, ids[0], 2, 2)?;
            pin(g, y, 114)
        })?,
    );
    push(
        "batchnorm_train",
        gradcheck(
            &[
                seeded(&[3, 2, 2, 2], -1.0, 1.0, 26),
                seeded(&[2], 0.5, 1.5, 27),
                seeded(&[2], -0.5, 0.5, 28),
            ],
            eps,
            |g, ids| {
                let (y, _, _) = ops::batchnorm2d_train(g, ids[0], ids[1], ids[2], 1e-5)?;
                pin(g, y, 115)
            },
        )?,
    );
    push(
        "batchnorm_eval",
        gradcheck(
            &[
                seeded(&[3, 2, 2, 2], -1.0, 1.0, 29),
                seeded(&[2], 0.5, 1.5, 30),
                seeded(&[2], -0.5, 0.5, 31),
            ],
            eps,
            |g, ids| {
                let y = ops::batchnorm2d_eval(g, ids[0], ids[1], ids[2], &[0.1, -0.2], &[0.7, 1.3], 1e-5)?;
                pin(g, y, 116)
            },
        )?,
    );
    push(
        "concat_channels",
        gradcheck(
            &[seeded(&[1, 2, 3, 3], -1.0, 1.0, 32), seeded(&[1, 3, 3, 3], -1.0, 1.0, 33)],
            eps,
            |g, ids| {
                let y = ops::concat_channels(g, &[ids[0], ids[1]])?;
                pin(g, y, 117)
            },
        )?,
    );
    push(
        "slice_channels",
        gradcheck(&[seeded(&[1, 4, 3, 3], -1.0, 1.0, 34)], eps, |g, ids| {
            let y = ops::slice_channels(g, ids[0], 1, 2)?;
            pin(g, y, 118)
        })?,
    );
    push(
        "select_batch",
        gradcheck(&[seeded(&[3, 2, 2, 2], -1.0, 1.0, 35)], eps, |g, ids| {
            let y = ops::select_batch(g, ids[0], 1)?;
            pin(g, y, 119)
        })?,
    );
    push(
        "stack_batch",
        gradcheck(
            &[
                seeded(&[2, 3, 3], -1.0, 1.0, 36),
                seeded(&[2, 3, 3], -1.0, 1.0, 37),
                seeded(&[2, 3, 3], -1.0, 1.0, 38),
            ],
            eps,
            |g, ids| {
                let y = ops::stack_batch(g, ids)?;
                pin(g, y, 120)
            },
        )?,
    );
    push(
        "channel_recalibration",
        gradcheck(
            &[seeded(&[3, 4, 4], -1.0, 1.0, 39), seeded(&[3], -0.5, 0.5, 40)],
            eps,
            |g, ids| {
                let y = ops::channel_scale_apply(g, ids[0], ids[1])?;
                pin(g, y, 121)
            },
        )?,
    );
    push(
        "self_attention",
        gradcheck(&[seeded(&[4, 9], -1.0, 1.0, 41)], eps, |g, ids| {
            let y = attention::self_attention_weights(g, ids[0])?;
            pin(g, y, 122)
        })?,
    );
    push(
        "intra_phase_attention",
        gradcheck(
            &[seeded(&[2, 3, 3], -1.0, 1.0, 42), seeded(&[2, 3, 3], -1.0, 1.0, 43)],
            eps,
            |g, ids| {
                let y = attention::intra_phase_attend(g, ids[0], ids[1])?;
                pin(g, y, 123)
            },
        )?,
    );
    push(
        "inter_phase_attention",
        gradcheck(
            &[
                seeded(&[2, 3, 3], -1.0, 1.0, 44),
                seeded(&[2, 3, 3], -1.0, 1.0, 45),
                seeded(&[2, 3, 3], -1.0, 1.0, 46),
            ],
            eps,
            |g, ids| {
                let y = attention::inter_phase_attend(g, ids[0], ids[1], ids[2], false)?;
                pin(g, y, 124)
            },
        )?,
    );
    for (name, mirrored, salt) in [
        ("phase_attention_block", false, 125u64),
        ("phase_attention_block_mirrored", true, 126u64),
    ] {
        push(
            name,
            gradcheck(
                &[
                    seeded(&[2, 3, 4, 4], -1.0, 1.0, 47 + salt),
                    seeded(&[2, 3, 4, 4], -1.0, 1.0, 48 + salt),
                    seeded(&[3, 3, 3, 3], -1.0, 1.0, 49 + salt),
                    seeded(&[3], -0.5, 0.5, 50 + salt),
                    seeded(&[3, 3, 3, 3], -1.0, 1.0, 51 + salt),
                    seeded(&[3], -0.5, 0.5, 52 + salt),
                ],
                eps,
                move |g, ids| {
                    let y = attention::pa_fuse(
                        g, ids[0], ids[1], ids[2], ids[3], ids[4], ids[5], mirrored,
                    )?;
                    pin(g, y, salt)
                },
            )?,
        );
    }
    push("network", network_gradcheck(eps, 24, 22)?);
    Ok(entries)
}

/// End-to-end check of a small phase-attention network in training mode.
///
/// The loss is the mean tumor probability of a two-item batch. The full
/// reverse-mode gradient — both input phases and every parameter group — is
/// compared against central differences along `directions` random unit
/// directions through the whole (parameter, input) space. Directional probes
/// rather than per-coordinate ones: a lone coordinate probe in a deep
/// rectified network occasionally shifts some activation across its kink and
/// reports a spurious mismatch, while a direction aggregates the entire
/// gradient so one kinked activation contributes only its diffuse share.
pub fn network_gradcheck(eps: f64, directions: usize, seed: u64) -> Result<GradCheckReport> {
    use crate::backbone::{build_network, Fusion, Mode, Model, NetworkConfig};
    use crate::ops;

    if !(1e-6..=1e-4).contains(&eps) {
        return Err(Error::config(format!(
            "finite-difference step {eps} outside the trustworthy range [1e-6, 1e-4]"
        )));
    }
    let mut cfg = NetworkConfig::tiny(Fusion::PaMsf);
    cfg.patch_size = 32;
    cfg.stage_channels = vec![4, 4, 4, 4, 4, 4];
    let mut model = build_network(&cfg, seed)?;

    let shape = vec![2usize, 3, 32, 32];
    let n_in: usize = shape.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x517c_c1b7);
    let mut pv: Vec<f64> = (0..n_in).map(|_| rng.gen_range(0.0..1.0)).collect();
    let mut art: Vec<f64> = (0..n_in).map(|_| rng.gen_range(0.0..1.0)).collect();

    let loss_of = |model: &Model, pv: &[f64], art: &[f64]| -> Result<f64> {
        let mut g = Graph::new();
        let bound = model.bind(&mut g, false);
        let p = g.constant(TensorData::new(shape.clone(), pv.to_vec())?);
        let a = g.constant(TensorData::new(shape.clone(), art.to_vec())?);
        let (out, _) = model.forward(&mut g, &bound, p, Some(a), Mode::Train)?;
        let tumor = ops::slice_channels(&mut g, out.probs(), 1, 1)?;
        let l = ops::mean_all(&mut g, tumor);
        Ok(g.value(l)[0])
    };

    // Analytic pass with everything differentiable.
    let mut g = Graph::new();
    let bound = model.bind(&mut g, true);
    let p = g.leaf(TensorData::new(shape.clone(), pv.clone())?, true);
    let a = g.leaf(TensorData::new(shape.clone(), art.clone())?, true);
    let (out, _) = model.forward(&mut g, &bound, p, Some(a), Mode::Train)?;
    let tumor = ops::slice_channels(&mut g, out.probs(), 1, 1)?;
    let loss = ops::mean_all(&mut g, tumor);
    g.backward(loss)?;
    let param_grads = bound.collect_grads(&g)?;
    let pv_grad = g.grad(p).map(<[f64]>::to_vec).unwrap_or_default();
    let art_grad = g.grad(a).map(<[f64]>::to_vec).unwrap_or_default();
    drop(g);

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        checked: 0,
        worst: (0, 0),
        worst_analytic: 0.0,
        worst_numeric: 0.0,
    };
    let consider = |report: &mut GradCheckReport, gi: usize, ci: usize, analytic: f64, numeric: f64| {
        let err = relative_error(analytic, numeric);
        report.checked += 1;
        if err > report.max_rel_err {
            report.max_rel_err = err;
            report.worst = (gi, ci);
            report.worst_analytic = analytic;
            report.worst_numeric = numeric;
        }
    };

    // Snapshot the exact point so every probe perturbs from the same state.
    let base_params: Vec<Vec<f64>> = model.params.iter_mut().map(|p| p.data.clone()).collect();
    let base_pv = pv.clone();
    let base_art = art.clone();

    for probe in 0..directions.max(1) {
        // A fresh unit direction through parameters and both inputs.
        let mut u_params: Vec<Vec<f64>> = base_params
            .iter()
            .map(|grp| {
                grp.iter()
                    .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
                    .collect()
            })
            .collect();
        let mut u_pv: Vec<f64> = (0..n_in)
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let mut u_art: Vec<f64> = (0..n_in)
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let sq: f64 = u_params.iter().flatten().map(|v| v * v).sum::<f64>()
            + u_pv.iter().map(|v| v * v).sum::<f64>()
            + u_art.iter().map(|v| v * v).sum::<f64>();
        let inv = 1.0 / sq.sqrt();
        u_params.iter_mut().flatten().for_each(|v| *v *= inv);
        u_pv.iter_mut().for_each(|v| *v *= inv);
        u_art.iter_mut().for_each(|v| *v *= inv);

        let analytic: f64 = param_grads
            .iter()
            .zip(&u_params)
            .map(|(grad, u)| grad.iter().zip(u).map(|(a, b)| a * b).sum::<f64>())
            .sum::<f64>()
            + pv_grad.iter().zip(&u_pv).map(|(a, b)| a * b).sum::<f64>()
            + art_grad.iter().zip(&u_art).map(|(a, b)| a * b).sum::<f64>();

        let at = |t: f64, model: &mut Model, pv: &mut [f64], art: &mut [f64]| -> Result<f64> {
            for (p, (base, u)) in model
                .params
                .iter_mut()
                .zip(base_params.iter().zip(&u_params))
            {
                for ((dst, &b), &u) in p.data.iter_mut().zip(base).zip(u) {
                    *dst = b + t * u;
                }
            }
            for ((dst, &b), &u) in pv.iter_mut().zip(&base_pv).zip(&u_pv) {
                *dst = b + t * u;
            }
            for ((dst, &b), &u) in art.iter_mut().zip(&base_art).zip(&u_art) {
                *dst = b + t * u;
            }
            loss_of(model, pv, art)
        };
        let lp = at(eps, &mut model, &mut pv, &mut art)?;
        let lm = at(-eps, &mut model, &mut pv, &mut art)?;
        let _ = at(0.0, &mut model, &mut pv, &mut art)?;
        consider(&mut report, 0, probe, analytic, (lp - lm) / (2.0 * eps));
    }

    Ok(report)
}
