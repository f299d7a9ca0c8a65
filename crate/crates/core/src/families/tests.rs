use super::*;
use crate::linalg::LN_2PI;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A parameter vector away from the identity so that every nonlinearity is
/// exercised.
fn random_params(kind: FamilyKind, dim: usize, scale: f64, rng: &mut ChaCha8Rng) -> FamilyParams {
    let normal = Normal::new(0.0, scale).unwrap();
    let n = FamilyParams::param_count(kind, dim);
    FamilyParams::from_values(kind, dim, (0..n).map(|_| normal.sample(rng)).collect()).unwrap()
}

fn small_kinds() -> Vec<(FamilyKind, usize)> {
    vec![
        (FamilyKind::GaussianDiag, 3),
        (FamilyKind::GaussianFull, 3),
        (FamilyKind::RealNvp { layers: 2, hidden: 4 }, 3),
        (FamilyKind::RealNvp { layers: 1, hidden: 3 }, 2),
    ]
}

/// Central differences of `f` over every parameter coordinate.
fn fd_over_params(p: &FamilyParams, f: impl Fn(&FamilyParams) -> f64) -> Vec<f64> {
    (0..p.len())
        .map(|i| {
            let h = 1e-6 * (1.0 + p.values()[i].abs());
            let mut up = p.clone();
            let mut dn = p.clone();
            up.values_mut()[i] += h;
            dn.values_mut()[i] -= h;
            (f(&up) - f(&dn)) / (2.0 * h)
        })
        .collect()
}

fn assert_close_rtol(got: &[f64], want_fd: &[f64], what: &str) {
    assert_eq!(got.len(), want_fd.len());
    for (i, (g, f)) in got.iter().zip(want_fd).enumerate() {
        assert!(
            (g - f).abs() <= 1e-5 * g.abs() + 1e-7,
            "{what}: coordinate {i}: analytic {g} vs finite difference {f}"
        );
    }
}

#[test]
fn standard_full_rank_init() {
    let p = FamilyParams::init_standard(FamilyKind::GaussianFull, 3, &mut rng(0)).unwrap();
    assert_eq!(p.mean().unwrap(), &[0.0, 0.0, 0.0]);
    let l = p.cholesky().unwrap();
    for i in 0..3 {
        for j in 0..3 {
            assert_eq!(l[i * 3 + j], if i == j { 1.0 } else { 0.0 });
        }
    }
}

#[test]
fn flow_rejects_one_dimension() {
    let err = FamilyParams::init_standard(FamilyKind::real_nvp(), 1, &mut rng(0)).unwrap_err();
    assert!(matches!(err, Error::UnsupportedFamily(_)));
    assert!(FamilyParams::init_standard(FamilyKind::GaussianFull, 0, &mut rng(0)).is_err());
}

#[test]
fn default_flow_parameter_count() {
    let p = FamilyParams::init_standard(FamilyKind::real_nvp(), 2, &mut rng(0)).unwrap();
    assert_eq!(p.len(), 23_720);
}

#[test]
fn flow_init_is_close_to_standard_normal() {
    let p = FamilyParams::init_standard(FamilyKind::real_nvp(), 2, &mut rng(1)).unwrap();
    let z = p.sample(&[0.3, -0.7]).unwrap();
    assert!((z[0] - 0.3).abs() < 1e-2 && (z[1] + 0.7).abs() < 1e-2, "{z:?}");

    // KL(q || N(0, I)) = E_q[log q(z) - log N(z)]
    let n = 100_000;
    let mut r = rng(2);
    let mut total = 0.0;
    for _ in 0..10 {
        let eps = p.draw_noise(n / 10, &mut r);
        let pass = p.forward(&eps).unwrap();
        let logq = pass.log_density();
        for (row, lq) in pass.z.chunks_exact(2).zip(&logq) {
            total += lq - std_normal_log_density(row);
        }
    }
    let kl = total / n as f64;
    assert!(kl.abs() < 1e-3, "KL at init = {kl}");
}

#[test]
fn affine_sampling_examples() {
    let p = FamilyParams::gaussian_full(&[1.0, 2.0], &[1.0, 0.0, 0.0, 1.0]).unwrap();
    assert_eq!(p.sample(&[0.0, 0.0]).unwrap(), vec![1.0, 2.0]);
    assert_eq!(p.inverse(&[1.5, 1.0]).unwrap(), vec![0.5, -1.0]);

    let p = FamilyParams::gaussian_full(&[0.5, -1.0], &[2.0, 0.0, 1.0, 1.0]).unwrap();
    let z = p.sample(&[1.0, 1.0]).unwrap();
    assert!((z[0] - 2.5).abs() < 1e-15 && (z[1] - 1.0).abs() < 1e-15);
}

#[test]
fn log_density_examples() {
    let p = FamilyParams::init_standard(FamilyKind::GaussianFull, 2, &mut rng(0)).unwrap();
    assert!((p.log_density(&[0.0, 0.0]).unwrap() + LN_2PI).abs() < 1e-15);

    let two = 2f64.ln();
    let p = FamilyParams::from_values(FamilyKind::GaussianDiag, 2, vec![0.3, -0.2, two, two]).unwrap();
    let v = p.log_density(&[0.3, -0.2]).unwrap();
    assert!((v - (-LN_2PI - 4f64.ln())).abs() < 1e-14);
}

#[test]
fn entropy_examples() {
    let p = FamilyParams::init_standard(FamilyKind::GaussianDiag, 1, &mut rng(0)).unwrap();
    assert!((p.entropy_closed_form().unwrap() - 1.418_938_533_204_672_7).abs() < 1e-14);

    let p = FamilyParams::gaussian_full(&[0.0, 0.0], &[1.0, 0.0, 0.0, std::f64::consts::E]).unwrap();
    assert!((p.entropy_closed_form().unwrap() - (2.0 * 1.418_938_533_204_672_7 + 1.0)).abs() < 1e-14);

    let flow = FamilyParams::init_standard(FamilyKind::real_nvp(), 2, &mut rng(0)).unwrap();
    assert!(matches!(flow.entropy_closed_form(), Err(Error::UnsupportedFamily(_))));
    assert!(flow.entropy_grad().is_err());
}

#[test]
fn round_trip_and_log_det_consistency() {
    let mut r = rng(11);
    let wide = [(FamilyKind::real_nvp(), 5)];
    for (kind, dim) in small_kinds().into_iter().chain(wide) {
        // keep per-unit fan-in variance comparable across widths
        let scale = if kind == FamilyKind::real_nvp() { 0.1 } else { 0.4 };
        let p = random_params(kind, dim, scale, &mut r);
        let eps = p.draw_noise(1000, &mut r);
        let pass = p.forward(&eps).unwrap();
        let inv = p.inverse_pass(&pass.z).unwrap();
        let max_err = eps.iter().zip(&inv.eps).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(max_err < 1e-10, "{kind:?}: round-trip error {max_err}");
        for (f, b) in pass.log_det.iter().zip(&inv.log_det) {
            assert!((f + b).abs() < 1e-10, "{kind:?}: {f} + {b}");
        }
    }
}

#[test]
fn flow_density_paths_agree() {
    let mut r = rng(12);
    let p = random_params(FamilyKind::RealNvp { layers: 3, hidden: 6 }, 4, 0.4, &mut r);
    let eps = p.draw_noise(50, &mut r);
    let pass = p.forward(&eps).unwrap();
    let via_forward = pass.log_density();
    let via_inverse = p.log_density_batch(&pass.z).unwrap();
    for (a, b) in via_forward.iter().zip(&via_inverse) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn full_rank_vjp_blocks() {
    let p = FamilyParams::gaussian_full(&[0.1, 0.2], &[1.5, 0.0, 0.3, 0.7]).unwrap();
    let eps = [0.4, -1.2];
    let cot = [2.0, -3.0];
    let g = p.sample_vjp(&eps, &cot).unwrap();
    assert_eq!(&g[..2], &cot);
    // packed lower triangle: L00 (log), L10, L11 (log)
    assert!((g[2] - cot[0] * eps[0] * 1.5).abs() < 1e-14);
    assert!((g[3] - cot[1] * eps[0]).abs() < 1e-14);
    assert!((g[4] - cot[1] * eps[1] * 0.7).abs() < 1e-14);
}

#[test]
fn vjp_matches_finite_differences() {
    let mut r = rng(21);
    for (kind, dim) in small_kinds() {
        for _ in 0..20 {
            let p = random_params(kind, dim, 0.5, &mut r);
            let eps = p.draw_noise(1, &mut r);
            let cot = p.draw_noise(1, &mut r);
            let g = p.sample_vjp(&eps, &cot).unwrap();
            let fd = fd_over_params(&p, |q| {
                q.sample(&eps).unwrap().iter().zip(&cot).map(|(a, b)| a * b).sum()
            });
            assert_close_rtol(&g, &fd, &format!("{kind:?} sample_vjp"));
        }
    }
}

#[test]
fn full_entropy_gradient_matches_finite_differences() {
    let mut r = rng(22);
    for (kind, dim) in small_kinds() {
        for _ in 0..20 {
            let p = random_params(kind, dim, 0.5, &mut r);
            let eps = p.draw_noise(1, &mut r);
            let g = p.logq_grad_full(&eps).unwrap();
            // evaluate log q through the inverse map, independent of the
            // reverse pass under test
            let fd = fd_over_params(&p, |q| q.log_density(&q.sample(&eps).unwrap()).unwrap());
            assert_close_rtol(&g, &fd, &format!("{kind:?} logq_grad_full"));
        }
    }
}

#[test]
fn flow_full_gradient_at_identity_init() {
    let mut r = rng(23);
    let p = FamilyParams::init_standard(FamilyKind::RealNvp { layers: 2, hidden: 5 }, 3, &mut r).unwrap();
    let eps = p.draw_noise(1, &mut r);
    let g = p.logq_grad_full(&eps).unwrap();
    let fd = fd_over_params(&p, |q| q.log_density(&q.sample(&eps).unwrap()).unwrap());
    assert_close_rtol(&g, &fd, "identity-init logq_grad_full");
}

#[test]
fn stl_gradient_matches_frozen_density_finite_differences() {
    let mut r = rng(24);
    for (kind, dim) in small_kinds() {
        for _ in 0..20 {
            let theta = random_params(kind, dim, 0.5, &mut r);
            let eps = theta.draw_noise(1, &mut r);
            let g = theta.logq_grad_stl(&eps).unwrap();
            // phi moves the sample, theta stays frozen in the density
            let fd = fd_over_params(&theta, |phi| theta.log_density(&phi.sample(&eps).unwrap()).unwrap());
            assert_close_rtol(&g, &fd, &format!("{kind:?} logq_grad_stl"));
        }
    }
}

#[test]
fn score_matches_finite_differences_and_full_minus_stl() {
    let mut r = rng(25);
    for (kind, dim) in small_kinds() {
        for _ in 0..20 {
            let p = random_params(kind, dim, 0.5, &mut r);
            let z = p.draw_noise(1, &mut r);
            let s = p.score(&z).unwrap();
            let fd = fd_over_params(&p, |q| q.log_density(&z).unwrap());
            assert_close_rtol(&s, &fd, &format!("{kind:?} score"));

            // total derivative = score + path term, at z = T(eps)
            let eps = p.draw_noise(1, &mut r);
            let z = p.sample(&eps).unwrap();
            let full = p.logq_grad_full(&eps).unwrap();
            let stl = p.logq_grad_stl(&eps).unwrap();
            let score = p.score(&z).unwrap();
            for i in 0..p.len() {
                assert!((full[i] - stl[i] - score[i]).abs() < 1e-9 * (1.0 + full[i].abs()));
            }
        }
    }
}

#[test]
fn density_gradient_in_z_matches_finite_differences() {
    let mut r = rng(26);
    for (kind, dim) in small_kinds() {
        let p = random_params(kind, dim, 0.5, &mut r);
        let z = p.draw_noise(1, &mut r);
        let (_, g) = p.log_density_grad_z_batch(&z).unwrap();
        let fd: Vec<f64> = (0..dim)
            .map(|j| {
                let mut up = z.clone();
                let mut dn = z.clone();
                up[j] += 1e-6;
                dn[j] -= 1e-6;
                (p.log_density(&up).unwrap() - p.log_density(&dn).unwrap()) / 2e-6
            })
            .collect();
        assert_close_rtol(&g, &fd, &format!("{kind:?} grad_z log q"));
    }
}

#[test]
fn gaussian_full_gradient_is_minus_entropy_gradient() {
    let mut r = rng(27);
    let p = random_params(FamilyKind::GaussianFull, 3, 0.5, &mut r);
    let eps = p.draw_noise(1, &mut r);
    let g = p.logq_grad_full(&eps).unwrap();
    let h = p.entropy_grad().unwrap();
    for (a, b) in g.iter().zip(&h) {
        assert!((a + b).abs() < 1e-14);
    }
    // D = 1, sigma = 1: the log-sigma coordinate is exactly -1
    let p = FamilyParams::init_standard(FamilyKind::GaussianDiag, 1, &mut r).unwrap();
    assert_eq!(p.logq_grad_full(&[0.37]).unwrap()[1], -1.0);
}

#[test]
fn closed_form_entropy_matches_monte_carlo() {
    let mut r = rng(28);
    for kind in [FamilyKind::GaussianDiag, FamilyKind::GaussianFull] {
        let p = random_params(kind, 3, 0.5, &mut r);
        let n = 100_000;
        let eps = p.draw_noise(n, &mut r);
        let z = p.forward(&eps).unwrap().z;
        let neg_logq: Vec<f64> = p.log_density_batch(&z).unwrap().iter().map(|v| -v).collect();
        let mean = neg_logq.iter().sum::<f64>() / n as f64;
        let var = neg_logq.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        let h = p.entropy_closed_form().unwrap();
        assert!((mean - h).abs() < 3.0 * se, "{kind:?}: {mean} vs {h} (se {se})");
    }
}

#[test]
fn stl_vanishes_when_q_matches_a_gaussian_density() {
    // grad_z log q at frozen parameters equals grad_z of the same Gaussian,
    // so pulling back grad log p - grad log q gives exactly zero.
    let mut r = rng(29);
    let p = random_params(FamilyKind::GaussianFull, 3, 0.5, &mut r);
    for _ in 0..100 {
        let eps = p.draw_noise(1, &mut r);
        let pass = p.forward(&eps).unwrap();
        let (_, gq) = p.log_density_grad_z_batch(&pass.z).unwrap();
        let l = p.cholesky().unwrap();
        // grad log N(z; mu, LL^T) = -L^{-T} eps
        let mut want = [0.0; 3];
        for i in (0..3).rev() {
            let mut acc = -eps[i];
            for k in i + 1..3 {
                acc -= l[k * 3 + i] * want[k];
            }
            want[i] = acc / l[i * 3 + i];
        }
        let diff: Vec<f64> = want.iter().zip(&gq).map(|(a, b)| a - b).collect();
        let g = p.backward(&pass, &diff, &[0.0]).unwrap();
        assert!(g.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-8);
    }
}

#[test]
fn batch_backward_is_sum_of_rows() {
    let mut r = rng(30);
    let p = random_params(FamilyKind::RealNvp { layers: 2, hidden: 4 }, 3, 0.5, &mut r);
    let eps = p.draw_noise(4, &mut r);
    let zbar = p.draw_noise(4, &mut r);
    let lambda = [0.3, -1.0, 2.0, 0.0];
    let pass = p.forward(&eps).unwrap();
    let batch = p.backward(&pass, &zbar, &lambda).unwrap();
    let mut sum = vec![0.0; p.len()];
    for k in 0..4 {
        let single = p.forward(&eps[3 * k..3 * k + 3]).unwrap();
        let g = p.backward(&single, &zbar[3 * k..3 * k + 3], &lambda[k..k + 1]).unwrap();
        sum.iter_mut().zip(&g).for_each(|(s, v)| *s += v);
    }
    for (a, b) in batch.iter().zip(&sum) {
        assert!((a - b).abs() < 1e-12 * (1.0 + a.abs()));
    }
}

#[test]
fn dimension_mismatches_are_errors() {
    let p = FamilyParams::init_standard(FamilyKind::GaussianFull, 2, &mut rng(0)).unwrap();
    assert!(matches!(p.sample(&[0.0]), Err(Error::DimensionMismatch { .. })));
    assert!(p.sample_vjp(&[0.0, 0.0], &[1.0]).is_err());
    assert!(FamilyParams::from_values(FamilyKind::GaussianFull, 2, vec![0.0; 4]).is_err());
}

#[test]
fn family_names_parse() {
    for kind in [FamilyKind::GaussianDiag, FamilyKind::GaussianFull, FamilyKind::real_nvp()] {
        assert_eq!(kind.name().parse::<FamilyKind>().unwrap(), kind);
    }
    assert!("spline".parse::<FamilyKind>().is_err());
}
