use cran_core::channel::{generate_channels, generate_topology, GenConfig, Topology};
use cran_core::model::norm_sqr;
use num_complex::Complex64;

#[test]
fn users_fill_the_disk_uniformly() {
    let cfg = GenConfig::default();
    let topo = generate_topology(&cfg, 1, 20_000, 11);
    let mean = topo.user_pos.iter().map(|(x, y)| x.hypot(*y)).sum::<f64>() / 20_000.0;
    // Area-uniform in a disk of radius R: E[r] = 2R/3.
    assert!((mean - 1000.0 / 3.0).abs() < 5.0, "mean radius {mean}");
}

fn fixed(distances: &[f64]) -> Topology {
    Topology {
        rrh_pos: distances.iter().map(|&d| (d, 0.0)).collect(),
        user_pos: vec![(0.0, 0.0)],
        radius_m: 500.0,
    }
}

const ANTENNAS: usize = 20_000;

#[test]
fn gain_follows_path_loss() {
    let cfg = GenConfig::default();
    let ch = generate_channels(&fixed(&[1.0, 10.0]), &cfg, ANTENNAS, 1.0, 5).unwrap();
    let near = norm_sqr(ch.h.link(0, 0)) / ANTENNAS as f64;
    let far = norm_sqr(ch.h.link(0, 1)) / ANTENNAS as f64;
    let expected = 10f64.powf(-3.06);
    assert!((near / expected - 1.0).abs() < 0.02, "E|h|^2 at 1 m: {near} vs {expected}");
    let ratio = far / near;
    let want = 10f64.powf(-3.67);
    assert!((ratio / want - 1.0).abs() < 0.04, "ratio {ratio} vs {want}");
}

#[test]
fn antennas_are_uncorrelated() {
    let cfg = GenConfig::default();
    let ch = generate_channels(&fixed(&[1.0]), &cfg, ANTENNAS, 1.0, 9).unwrap();
    let h = ch.h.link(0, 0);
    let (a, b) = h.split_at(ANTENNAS / 2);
    let cross: Complex64 = a.iter().zip(b).map(|(x, y)| x * y.conj()).sum();
    let rho = cross.norm() / (norm_sqr(a) * norm_sqr(b)).sqrt();
    assert!(rho < 0.02, "sample correlation {rho}");
    let pseudo: Complex64 = h.iter().map(|x| x * x).sum();
    assert!(pseudo.norm() / norm_sqr(h) < 0.02, "not circular: {}", pseudo.norm() / norm_sqr(h));
}
