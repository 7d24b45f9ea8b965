mod common;

use lpvss::bench::{
    excitation, generate_dataset, generate_with_noise, multisine, multisine_frequencies, read_dataset,
    sample_scheduling, scheduling_vertices, write_dataset, zero_model_nrmse, SetName, TrueSystem, NOISE_VAR,
    N_SINES, P_BOX, TRUE_SYSTEM_CRC32,
};
use lpvss::linalg::DenseMatrix;

#[test]
fn table_one_dimensions() {
    let expect = [
        (SetName::Training, 200, 3200, (-1.0, 1.0), 0.3),
        (SetName::Validation, 200, 1280, (-1.0, 1.0), 0.3),
        (SetName::TestA, 200, 30, (-1.0, 1.0), 0.3),
        (SetName::TestB, 6000, 1, (-20.0, 20.0), 1.0),
    ];
    for (name, t, n_b, range, scale) in expect {
        let s = name.spec();
        assert_eq!((s.t, s.n_b, s.u_range, s.p_scale), (t, n_b, range, scale), "{}", name.as_str());
    }
}

#[test]
fn generated_sets_respect_ranges() {
    for name in [SetName::TestA, SetName::TestB] {
        let ds = generate_dataset(&name.spec(), 3);
        assert_eq!(ds.trajectories.len(), ds.meta.n_b);
        for tr in &ds.trajectories {
            assert_eq!(tr.u.shape(), (ds.meta.t, 1));
            assert_eq!(tr.p.shape(), (ds.meta.t, 3));
            assert_eq!(tr.y.shape(), (ds.meta.t, 1));
            let u = tr.u.as_slice();
            let lo = u.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!((lo, hi), (ds.meta.u_min, ds.meta.u_max));
            for row in 0..ds.meta.t {
                for (j, &(a, b)) in P_BOX.iter().enumerate() {
                    let v = tr.p[(row, j)];
                    assert!(v >= ds.meta.p_scale * a && v <= ds.meta.p_scale * b);
                }
            }
        }
    }
}

#[test]
fn generation_is_reproducible_and_seed_dependent() {
    let spec = SetName::TestA.spec();
    let a = generate_dataset(&spec, 11);
    let b = generate_dataset(&spec, 11);
    let c = generate_dataset(&spec, 12);
    assert_eq!(a, b);
    assert_ne!(a.trajectories[0].u, c.trajectories[0].u);
}

#[test]
fn sets_use_distinct_streams() {
    let a = generate_dataset(&SetName::Validation.desk_spec(), 1);
    let b = generate_dataset(&SetName::TestA.spec(), 1);
    assert_ne!(a.trajectories[0].u, b.trajectories[0].u);
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Two multisines on the same frequency grid have sample correlation
/// `Σ cos(φ_k − ψ_k) / n` when every line falls on a DFT bin.
#[test]
fn multisine_correlation_follows_phase_offsets() {
    let mut rng = common::rng(3);
    for _ in 0..20 {
        let a: Vec<f64> = (0..N_SINES).map(|_| rand::Rng::random_range(&mut rng, 0.0..std::f64::consts::TAU)).collect();
        let b: Vec<f64> = (0..N_SINES).map(|_| rand::Rng::random_range(&mut rng, 0.0..std::f64::consts::TAU)).collect();
        let predicted = a.iter().zip(&b).map(|(x, y)| (x - y).cos()).sum::<f64>() / N_SINES as f64;
        let rho = correlation(&multisine(220, &a), &multisine(220, &b));
        assert!((rho - predicted).abs() < 1e-12, "{rho} vs {predicted}");
    }
}

#[test]
fn trajectory_inputs_are_uncorrelated_on_average() {
    let ds = generate_dataset(&SetName::TestA.spec(), 5);
    let mut rhos = Vec::new();
    for i in 0..20 {
        for j in i + 1..20 {
            rhos.push(correlation(ds.trajectories[i].u.as_slice(), ds.trajectories[j].u.as_slice()));
        }
    }
    let mean = rhos.iter().sum::<f64>() / rhos.len() as f64;
    assert!(mean.abs() < 0.1, "mean ρ = {mean}");
}

#[test]
fn input_is_uncorrelated_with_scheduling() {
    let ds = generate_dataset(&SetName::TestA.spec(), 5);
    let u: Vec<f64> = ds.trajectories.iter().flat_map(|t| t.u.as_slice().to_vec()).collect();
    for j in 0..3 {
        let p: Vec<f64> = ds.trajectories.iter().flat_map(|t| t.p.column(j)).collect();
        let rho = correlation(&u, &p);
        assert!(rho.abs() < 0.1, "channel {j}: ρ = {rho}");
    }
}

#[test]
fn output_noise_is_additive() {
    let spec = SetName::TestA.spec();
    let (noisy, noise) = generate_with_noise(&spec, 21, NOISE_VAR);
    let (clean, zero) = generate_with_noise(&spec, 21, 0.0);
    assert!(zero.iter().flatten().all(|v| *v == 0.0));
    let sys = TrueSystem::paper();
    for ((n, c), e) in noisy.trajectories.iter().zip(&clean.trajectories).zip(&noise) {
        assert_eq!(n.u, c.u);
        assert_eq!(n.p, c.p);
        for t in 0..n.y.rows() {
            assert!((n.y[(t, 0)] - c.y[(t, 0)] - e[t]).abs() < 1e-12);
        }
        let direct = sys.simulate(c.u.as_slice(), &c.p);
        assert_eq!(direct, c.y.as_slice());
    }
}

#[test]
fn dataset_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate_dataset(&SetName::TestA.spec(), 4);
    write_dataset(&ds, dir.path()).unwrap();
    assert!(dir.path().join("traj_00029.csv").exists());
    let header = std::fs::read_to_string(dir.path().join("traj_00000.csv")).unwrap();
    assert_eq!(header.lines().next(), Some("t,u,p1,p2,p3,y"));
    let back = read_dataset(dir.path()).unwrap();
    assert_eq!(back, ds);
}

/// Periodogram `|Σ x_t e^{−2πi k t / T}|²` by direct summation.
fn periodogram(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, v) in x.iter().enumerate() {
                let w = -2.0 * std::f64::consts::PI * (k * t) as f64 / n as f64;
                re += v * w.cos();
                im += v * w.sin();
            }
            re * re + im * im
        })
        .collect()
}

#[test]
fn multisine_has_ten_lines() {
    // T = 220 puts every k/22 exactly on DFT bin 10k.
    let phases: Vec<f64> = (0..N_SINES).map(|k| 0.37 * k as f64 + 0.1).collect();
    let x = multisine(220, &phases);
    let pg = periodogram(&x);
    let line = (220.0f64 / 2.0).powi(2);
    let mut lines = Vec::new();
    for (k, p) in pg.iter().enumerate() {
        if *p > 1e-6 * line {
            lines.push(k);
            assert!((p - line).abs() < 1e-8 * line, "bin {k}: {p}");
        }
    }
    assert_eq!(lines, (1..=10).map(|k| 10 * k).collect::<Vec<_>>());
    let freqs = multisine_frequencies(N_SINES);
    for (k, f) in freqs.iter().enumerate() {
        assert!((f - (k + 1) as f64 / 22.0).abs() < 1e-15);
    }
}

#[test]
fn excitation_peaks_sit_on_the_lines() {
    let mut rng = common::rng(8);
    let u = excitation(2200, (-1.0, 1.0), N_SINES, 0.05, &mut rng);
    let pg = periodogram(&u);
    let mut order: Vec<usize> = (1..pg.len()).collect();
    order.sort_by(|a, b| pg[*b].partial_cmp(&pg[*a]).unwrap());
    let mut top: Vec<usize> = order[..10].to_vec();
    top.sort();
    assert_eq!(top, (1..=10).map(|k| 100 * k).collect::<Vec<_>>());
}

#[test]
fn degenerate_excitation_is_the_midpoint() {
    let mut rng = common::rng(1);
    let u = excitation(17, (2.0, 6.0), 0, 0.0, &mut rng);
    assert!(u.iter().all(|v| *v == 4.0));
}

#[test]
fn true_system_checksum() {
    let sys = TrueSystem::paper();
    assert_eq!(sys.checksum(), TRUE_SYSTEM_CRC32);
    assert_eq!(sys.d, [0.3, 0.01, 0.0, 0.04]);
}

/// `‖A^k‖_F^{1/k}` for `k = 2^squarings`, an upper bound on the spectral
/// radius that tightens as `k` grows.
fn gelfand_bound(a: &DenseMatrix, squarings: u32) -> f64 {
    let mut m = a.clone();
    let mut log_scale = 0.0;
    for _ in 0..squarings {
        m = m.matmul(&m);
        let f = m.frobenius_norm();
        if f > 0.0 {
            m = m.scale(1.0 / f);
            log_scale = 2.0 * log_scale + f.ln();
        } else {
            return 0.0;
        }
    }
    let k = 2f64.powi(squarings as i32);
    (log_scale / k).exp()
}

#[test]
fn true_system_is_stable_over_the_box() {
    let sys = TrueSystem::paper();
    let mut rng = common::rng(2024);
    let samples = sample_scheduling(10_000, 1.0, &mut rng);
    let mut points: Vec<Vec<f64>> = (0..samples.rows()).map(|i| samples.row(i).to_vec()).collect();
    points.extend(scheduling_vertices(1.0).iter().map(|v| v.to_vec()));
    let mut worst: f64 = 0.0;
    for p in &points {
        let a = sys.a_at(p);
        let bound = gelfand_bound(&a, 8);
        worst = worst.max(bound);
        assert!(lpvss::linalg::spectral_radius_upper(&a, 2000) < 1.0, "p = {p:?}");
    }
    assert!(worst < 1.0, "largest bound {worst}");
}

#[test]
fn zero_model_is_no_better_than_one() {
    for name in [SetName::TestA, SetName::TestB] {
        let ds = generate_dataset(&name.spec(), 6);
        assert!(zero_model_nrmse(&ds).unwrap() >= 1.0);
    }
}
