use proptest::prelude::*;

use coordfit::embedders::{metric_tensor, super_gaussian_embed, volume_element, SuperGaussianConfig};
use coordfit::graphlap::{build_graph, quadratic_form};
use coordfit::harness::{Report, ReportRow};
use coordfit::kv::KvMap;
use coordfit::linalg::Matrix;
use coordfit::net::{AdamConfig, AdamState};
use coordfit::sigma_model::{bin_pairs, fit_polynomial, interpolate_sigma, spearman, SigmaNodes};
use coordfit::signals::{make_split, netpbm, psnr, SampledSignal, SplitScheme};

fn graph_input() -> impl Strategy<Value = (usize, usize, Vec<f64>, Vec<f64>, f64, f64)> {
    (2usize..10, 1usize..4).prop_flat_map(|(l, d)| {
        (
            Just(l),
            Just(d),
            prop::collection::vec(-1.0f64..1.0, l * d),
            prop::collection::vec(-2.0f64..2.0, l),
            0.1f64..2.0,
            prop::sample::select(vec![0.0, 0.5, 1.0]),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn laplacian_is_psd_and_matches_edge_sum((l, d, emb, u, eps, lam) in graph_input()) {
        let g = build_graph(&Matrix::from_vec(l, d, emb), eps, lam).unwrap();
        let q = quadratic_form(&g, &u).unwrap();
        let a = g.adjacency();
        let mut edge = 0.0;
        for i in 0..l {
            for j in i + 1..l {
                edge += a.get(i, j) * (u[i] - u[j]).powi(2);
            }
        }
        prop_assert!(q >= -1e-12);
        prop_assert!((q - edge).abs() <= 1e-10 * edge.abs().max(1e-300) + 1e-300);
        for i in 0..l {
            prop_assert_eq!(a.get(i, i), 0.0);
            for j in 0..l {
                prop_assert_eq!(a.get(i, j), a.get(j, i));
            }
        }
    }

    #[test]
    fn graph_is_permutation_equivariant((l, d, emb, _u, eps, lam) in graph_input(), rot in 0usize..10) {
        let perm: Vec<usize> = (0..l).map(|i| (i + rot) % l).collect();
        let m = Matrix::from_vec(l, d, emb.clone());
        let pm = Matrix::from_fn(l, d, |i, k| m.get(perm[i], k));
        let a = build_graph(&m, eps, lam).unwrap();
        let b = build_graph(&pm, eps, lam).unwrap();
        for i in 0..l {
            for j in 0..l {
                let (x, y) = (b.adjacency().get(i, j), a.adjacency().get(perm[i], perm[j]));
                prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(y.abs()).max(1e-300));
            }
        }
    }

    #[test]
    fn splits_partition_the_lattice(n in 4usize..200, frac in 0.05f64..0.95, seed in 0u64..1000, random in any::<bool>()) {
        let s = SampledSignal::from_grid(vec![n], 1, vec![0.5; n]).unwrap();
        let scheme = if random { SplitScheme::Random } else { SplitScheme::Regular };
        let Ok(p) = make_split(&s, scheme, frac, seed) else { return Ok(()); };
        let mut all: Vec<usize> = p.train_idx.iter().chain(&p.test_idx).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert!(p.train_idx.windows(2).all(|w| w[0] < w[1]));
        prop_assert_eq!(&p, &make_split(&s, scheme, frac, seed).unwrap());
    }

    #[test]
    fn line_interpolation_stays_within_node_range(
        sig in prop::collection::vec(1e-3f64..1.0, 2..20),
        t in prop::collection::vec(-0.5f64..1.5, 1..30),
    ) {
        let k = sig.len();
        let nodes = SigmaNodes::Line((0..k).map(|i| i as f64 / (k - 1) as f64).collect());
        let out = interpolate_sigma(&nodes, &sig, &t).unwrap();
        let lo = sig.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = sig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(out.iter().all(|v| *v >= lo && *v <= hi));
    }

    #[test]
    fn grid_interpolation_stays_within_node_range(
        sig in prop::collection::vec(1e-3f64..1.0, 12),
        t in prop::collection::vec(0.0f64..1.0, 2..20),
    ) {
        let nodes = SigmaNodes::Grid { rows: vec![0.0, 0.5, 1.0], cols: vec![0.0, 0.2, 0.7, 1.0] };
        let t = &t[..t.len() / 2 * 2];
        let out = interpolate_sigma(&nodes, &sig, t).unwrap();
        let lo = sig.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = sig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(out.iter().all(|v| *v >= lo - 1e-15 && *v <= hi + 1e-15));
    }

    #[test]
    fn psnr_is_symmetric_and_decreasing(a in prop::collection::vec(0.0f64..1.0, 1..50), e in 1e-4f64..0.3) {
        let b: Vec<f64> = a.iter().map(|v| v + e).collect();
        let c: Vec<f64> = a.iter().map(|v| v + 2.0 * e).collect();
        prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        prop_assert!(psnr(&a, &c).unwrap() < psnr(&a, &b).unwrap());
    }

    #[test]
    fn embedding_metric_is_symmetric_psd(x in 0.0f64..1.0, y in 0.0f64..1.0, s in 0.002f64..0.2) {
        let cfg = SuperGaussianConfig::default_for(2);
        let phi = super_gaussian_embed(&[x, y], s, &cfg).unwrap();
        prop_assert!(phi.iter().all(|v| *v >= 0.0 && *v <= 1.0));
        let g = metric_tensor(&[x, y], s, &cfg).unwrap();
        let (a, b, d) = (g.get(0, 0), g.get(0, 1), g.get(1, 1));
        prop_assert_eq!(b, g.get(1, 0));
        prop_assert!(a >= 0.0 && d >= 0.0);
        prop_assert!(a * d - b * b >= -1e-9 * (a * d).max(1.0));
        prop_assert!(volume_element(&[x, y], s, &cfg).unwrap() >= 0.0);
    }

    #[test]
    fn spearman_is_bounded_and_rank_invariant(v in prop::collection::vec((0.0f64..10.0, 0.0f64..10.0), 3..40)) {
        let (a, b): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
        let r = spearman(&a, &b);
        if r.is_finite() {
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&r));
            let a3: Vec<f64> = a.iter().map(|x| x.powi(3) + 1.0).collect();
            prop_assert!((spearman(&a3, &b) - r).abs() < 1e-12);
        }
    }

    #[test]
    fn predictions_respect_bounds(g in prop::collection::vec(0.0f64..20.0, 2..30), probe in -5.0f64..50.0) {
        let pairs: Vec<(f64, f64)> = g.iter().enumerate().map(|(i, &x)| (x + i as f64 * 1e-3, 0.01 + (x * 0.7).sin() * 0.05)).collect();
        let m = fit_polynomial(&pairs, 4, 1e-8).unwrap().with_bounds(1e-3, 0.04).unwrap();
        let s = m.predict(probe);
        prop_assert!((1e-3..=0.04).contains(&s));
    }

    #[test]
    fn binned_abscissae_are_sorted(v in prop::collection::vec((0.0f64..10.0, 0.0f64..1.0), 1..100), bins in 1usize..30) {
        let b = bin_pairs(&v, bins);
        prop_assert!(b.len() <= bins.min(v.len()));
        prop_assert!(b.windows(2).all(|w| w[0].0 <= w[1].0));
    }

    #[test]
    fn kv_render_parse_round_trip(entries in prop::collection::btree_map("[a-z_]{1,8}", "[a-zA-Z0-9.,_/-]{0,12}", 0..10)) {
        let mut kv = KvMap::default();
        for (k, v) in &entries {
            kv.insert(k, v);
        }
        prop_assert_eq!(KvMap::parse(&kv.render()).unwrap(), kv);
    }

    #[test]
    fn netpbm_round_trip_quantizes_only(w in 1usize..12, h in 1usize..12, rgb in any::<bool>(), seed in any::<u64>()) {
        let c = if rgb { 3 } else { 1 };
        let vals: Vec<f64> = (0..w * h * c).map(|i| ((i as u64).wrapping_mul(seed | 1) % 1000) as f64 / 999.0).collect();
        let img = netpbm::NetpbmImage::from_values(w, h, c, &vals).unwrap();
        let back = netpbm::decode(&img.encode()).unwrap();
        prop_assert_eq!(&back, &img);
        for (a, b) in back.data.iter().zip(&vals) {
            prop_assert!((*a as f64 / 255.0 - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn report_csv_round_trips(names in prop::collection::vec("[ -~]{0,10}", 1..5), psnrs in prop::collection::vec(0.0f64..100.0, 5)) {
        let mut r = Report::default();
        for (i, n) in names.iter().enumerate() {
            r.push(ReportRow {
                experiment: "encode1d".into(),
                signal: n.clone(),
                variant: "sg_beta".into(),
                depth: i + 1,
                fraction: 0.25,
                scheme: "regular".into(),
                seed: i as u64,
                train_psnr: Some((psnrs[i] * 1e6).round() / 1e6),
                test_psnr: None,
                ssim: None,
                wall_time: None,
                param: Some(psnrs[i]),
                error: (i % 2 == 1).then(|| n.clone()).filter(|s| !s.is_empty()),
            });
        }
        let text = r.to_csv_string().unwrap();
        prop_assert_eq!(Report::read_csv(text.as_bytes()).unwrap(), r);
    }

    #[test]
    fn adam_without_gradient_or_decay_is_identity(p in prop::collection::vec(-5.0f64..5.0, 1..20), steps in 1usize..20) {
        let mut state = AdamState::new(AdamConfig { weight_decay: 0.0, ..AdamConfig::default() }, &[p.len()]);
        let mut q = p.clone();
        let zero = vec![0.0; p.len()];
        for _ in 0..steps {
            state.step(&mut [&mut q], &[&zero]);
        }
        prop_assert_eq!(q, p);
    }
}
