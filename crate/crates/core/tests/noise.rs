use selflc::noise::{inject_asymmetric, inject_symmetric, noise_stats, transition_counts, write_corruption_csv, NoiseKind, NoisePlan};

fn balanced(n: usize, c: usize) -> Vec<usize> {
    (0..n).map(|i| i % c).collect()
}

#[test]
fn symmetric_rate_within_three_sigma() {
    let (n, c, r) = (10_000, 5, 0.4);
    let sigma = (r * (1.0 - r) / n as f64).sqrt();
    for seed in 0..5 {
        let rec = inject_symmetric(&balanced(n, c), c, r, seed).unwrap();
        let rate = noise_stats(&rec, c).unwrap().overall;
        assert!((rate - r).abs() < 3.0 * sigma, "seed {seed}: {rate}");
    }
}

#[test]
fn symmetric_flips_are_spread_over_other_classes() {
    let (n, c) = (20_000, 4);
    let rec = inject_symmetric(&balanced(n, c), c, 0.6, 3).unwrap();
    let t = transition_counts(&rec, c);
    for (a, row) in t.iter().enumerate() {
        let off: Vec<usize> = (0..c).filter(|&b| b != a).map(|b| row[b]).collect();
        let mean = off.iter().sum::<usize>() as f64 / off.len() as f64;
        for v in off {
            assert!((v as f64 - mean).abs() < 4.0 * mean.sqrt(), "row {a}: {row:?}");
        }
    }
}

#[test]
fn asymmetric_counts_are_exact() {
    let labels: Vec<usize> = (0..1003).map(|i| (i * 7) % 6).collect();
    let n_class = |k: usize| labels.iter().filter(|&&y| y == k).count();
    for r in [0.1, 0.25, 0.4, 1.0] {
        let rec = inject_asymmetric(&labels, 6, r, &[(0, 3), (1, 4)], 9).unwrap();
        let t = transition_counts(&rec, 6);
        for (a, b) in [(0, 3), (3, 0), (1, 4), (4, 1)] {
            assert_eq!(t[a][b], (r * n_class(a) as f64).floor() as usize, "r={r} {a}->{b}");
        }
        for k in [2, 5] {
            assert_eq!(t[k][k], n_class(k));
        }
    }
}

#[test]
fn full_rate_flips_every_row() {
    let rec = inject_symmetric(&balanced(3000, 3), 3, 1.0, 5).unwrap();
    assert!(rec.iter().all(|r| r.flipped && r.given != r.clean));
}

#[test]
fn corruption_files_are_byte_identical() {
    let plan = NoisePlan {
        kind: NoiseKind::Symmetric,
        rate: 0.4,
        seed: 77,
        ..NoisePlan::default()
    };
    let labels = balanced(2000, 5);
    let render = || {
        let mut buf = Vec::new();
        write_corruption_csv(&mut buf, &plan, &plan.apply(&labels, 5).unwrap()).unwrap();
        buf
    };
    let a = render();
    assert_eq!(a, render());
    let text = String::from_utf8(a).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("# kind=symmetric, r=0.4, seed=77"));
    assert_eq!(lines.next(), Some("index,clean,given,flipped"));
    assert_eq!(text.lines().count(), 2002);
}
