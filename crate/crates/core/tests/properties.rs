use mcwc_core::align::random_permutation;
use mcwc_core::blocks::{apply_permutation, BlockSet, Permutation};
use mcwc_core::codec::{keyframe_indicator, segment_count, segment_layers, RateBreakdown};
use mcwc_core::container::{from_bytes, to_bytes, Checkpoint, LayerTensors, Tensor};
use mcwc_core::diagnostics::{block_cosine, break_even, energy, nre, predictor_r2, total_variation, DeploymentScenario};
use mcwc_core::entropy::{pmf_table, range_decode, range_encode, Cdf, BETA_FLOOR};
use mcwc_core::permcode::{
    decode_perm_stream, delta_digits, encode_perm_stream, fit_perm_model, lehmer_decode, lehmer_encode, reconstruct_digits,
    unzigzag, zigzag,
};
use mcwc_core::quant::{dequantize, init_quantizer, quantize};
use proptest::collection::vec;
use proptest::prelude::*;

fn perm(max: usize) -> impl Strategy<Value = Permutation> {
    (1..=max, any::<u64>()).prop_map(|(n, seed)| random_permutation(n, seed))
}

fn finite(lo: f32, hi: f32) -> impl Strategy<Value = f32> {
    lo..hi
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 128, ..ProptestConfig::default() })]

    #[test]
    fn lehmer_is_a_bijection(p in perm(300)) {
        let d = lehmer_encode(&p);
        for (k, &z) in d.iter().enumerate() {
            prop_assert!((z as usize) < p.len() - k);
        }
        prop_assert_eq!(lehmer_decode(&d).unwrap(), p);
    }

    #[test]
    fn permutation_inverse_composes_to_identity(p in perm(200)) {
        prop_assert!(p.compose(&p.inverse()).is_identity());
        prop_assert!(p.inverse().compose(&p).is_identity());
    }

    #[test]
    fn applying_a_permutation_then_its_inverse_restores_blocks(p in perm(40), seed in any::<u32>()) {
        let blocks: Vec<Vec<f32>> = (0..p.len()).map(|i| vec![i as f32, (seed % 97) as f32]).collect();
        let bs = BlockSet { layer: 1, type_id: 0, blocks };
        let there = apply_permutation(&bs, &p).unwrap();
        prop_assert_eq!(apply_permutation(&there, &p.inverse()).unwrap(), bs);
    }

    #[test]
    fn zigzag_round_trips(x in -(1i64 << 40)..(1i64 << 40)) {
        prop_assert_eq!(unzigzag(zigzag(x)), x);
    }

    #[test]
    fn perm_streams_round_trip(a in perm(300), seed in any::<u64>()) {
        let b = random_permutation(a.len(), seed);
        let (da, db) = (lehmer_encode(&a), lehmer_encode(&b));
        let delta = delta_digits(&db, &da).unwrap();
        prop_assert_eq!(reconstruct_digits(&da, &delta).unwrap(), db.clone());
        let model = fit_perm_model(&[&da, &db], &[&delta], 16);
        for prev in [None, Some(da.as_slice())] {
            let bytes = encode_perm_stream(&db, prev, &model).unwrap();
            prop_assert_eq!(decode_perm_stream(&bytes, db.len(), prev, &model).unwrap(), db.clone());
        }
    }

    #[test]
    fn range_coder_round_trips(freqs in vec(vec(0u32..1000, 1..50), 1..6), picks in vec(any::<u32>(), 0..3000)) {
        let cdfs: Vec<Cdf> = freqs
            .iter()
            .map(|f| {
                let p: Vec<f64> = f.iter().enumerate().map(|(k, &v)| v as f64 + f64::from(k == 0)).collect();
                Cdf::from_probs(&p).unwrap()
            })
            .collect();
        // Only symbols with non-zero mass are codable.
        let syms: Vec<usize> = picks
            .iter()
            .enumerate()
            .map(|(i, &r)| {
                let c = &cdfs[i % cdfs.len()];
                let live: Vec<usize> = (0..c.num_symbols()).filter(|&s| c.prob(s) > 0.0).collect();
                live[r as usize % live.len()]
            })
            .collect();
        let bytes = range_encode(&syms, |i| &cdfs[i % cdfs.len()]);
        prop_assert_eq!(range_decode(&bytes, |i| &cdfs[i % cdfs.len()], syms.len()).unwrap(), syms);
    }

    #[test]
    fn logistic_pmf_is_normalized(alpha in -400.0f64..400.0, beta in BETA_FLOOR..500.0, q_max in 1u32..300) {
        let p = pmf_table(alpha, beta, q_max);
        prop_assert_eq!(p.len(), 2 * q_max as usize + 1);
        prop_assert!(p.iter().all(|&v| v > 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn quantizer_error_is_bounded_and_codes_are_stable(
        (x, group_len) in (1usize..300, 1usize..8).prop_flat_map(|(g, n)| (vec(finite(-10.0, 10.0), g * n), Just(g))),
        gamma in 0.05f64..2.0,
        q_max in 1u32..256,
        means in any::<bool>(),
    ) {
        let q = init_quantizer(&x, group_len, gamma, q_max, means).unwrap();
        let (c, _) = quantize(&x, &q).unwrap();
        prop_assert!(c.iter().all(|v| v.unsigned_abs() <= q_max));
        let y = dequantize(&c, &q).unwrap();
        for (k, (&a, &b)) in x.iter().zip(&y).enumerate() {
            let g = k / q.group_len;
            let (s, m) = (q.step[g] as f64, q.mean_of(g) as f64);
            if ((a as f64 - m) / s).abs() <= q_max as f64 {
                prop_assert!((a as f64 - b as f64).abs() <= 0.5 * s * (1.0 + 1e-12) + 1e-12 * m.abs());
            }
        }
        prop_assert_eq!(quantize(&y, &q).unwrap().0, c);
    }

    #[test]
    fn nre_relates_to_r2(t in vec(vec(finite(-2.0, 2.0), 4), 2..20), noise in vec(finite(-0.5, 0.5), 80)) {
        let p: Vec<Vec<f32>> = t.iter().enumerate().map(|(i, r)| r.iter().enumerate().map(|(j, v)| v + noise[(4 * i + j) % 80]).collect()).collect();
        let sst = total_variation(&t).unwrap();
        let e = energy(&t);
        prop_assume!(sst > 1e-6 && e > 1e-6);
        let r2 = predictor_r2(&t, &p).unwrap();
        let n = nre(&t, &p).unwrap();
        prop_assert!((n - (1.0 - r2) * sst / e).abs() <= 1e-9 * (1.0 + n));
        prop_assert!(sst <= e * (1.0 + 1e-12));
    }

    #[test]
    fn cosine_is_bounded(a in vec(finite(-5.0, 5.0), 1..64), b in vec(finite(-5.0, 5.0), 1..64)) {
        let n = a.len().min(b.len());
        let c = block_cosine(&a[..n], &b[..n]);
        prop_assert!((-1.0..=1.0).contains(&c));
    }

    #[test]
    fn break_even_is_monotone(extra in 1.0f64..1e5, more in 0.0f64..1e5, bw in 0.01f64..10.0, gain in 0.01f64..5.0) {
        let s = DeploymentScenario { baseline_gb: 1.0 + gain, compressed_gb: 1.0, bandwidth_gb_s: bw, decode_s: 1.0, materialize_s: 1.0, extra_encode_s: extra };
        let costlier = DeploymentScenario { extra_encode_s: extra + more, ..s };
        let smaller = DeploymentScenario { compressed_gb: 0.5, ..s };
        let n = break_even(&s).unwrap();
        prop_assert!(break_even(&costlier).unwrap() >= n);
        prop_assert!(break_even(&smaller).unwrap() <= n);
        prop_assert!(n as f64 * s.load_saving_s() >= extra);
    }

    #[test]
    fn rate_percentages_sum_to_100(parts in vec(0u64..1 << 40, 5)) {
        prop_assume!(parts.iter().any(|&p| p > 0));
        let r = RateBreakdown::from_components(parts[0], parts[1], parts[2], parts[3], parts[4]);
        prop_assert_eq!(r.total_bits, parts.iter().sum::<u64>());
        prop_assert!((r.fractions().iter().sum::<f64>() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn segments_tile_the_layers(l in 1usize..200, k in 1usize..40) {
        let segs = segment_layers(l, k);
        prop_assert_eq!(segs.len(), segment_count(l, k));
        let mut next = 1;
        for s in &segs {
            prop_assert_eq!(s.start, next);
            prop_assert!(keyframe_indicator(s.start, k));
            prop_assert!((s.start + 1..s.end).all(|x| !keyframe_indicator(x, k)));
            next = s.end;
        }
        prop_assert_eq!(next, l + 1);
    }

    #[test]
    fn container_round_trips(shapes in vec(vec(1usize..5, 1..4), 1..6), layers in 1usize..4, seed in any::<u16>()) {
        let mut ckpt = Checkpoint { arch_id: seed as u32, layers: Vec::new() };
        for l in 1..=layers {
            let mut lt = LayerTensors::new(l);
            for (k, s) in shapes.iter().enumerate() {
                let n: usize = s.iter().product();
                let data = (0..n).map(|i| ((i * 31 + k * 7 + l) as f32).sin() * seed as f32).collect();
                lt.insert(format!("t{k}"), Tensor::new(s.clone(), data).unwrap());
            }
            ckpt.layers.push(lt);
        }
        let bytes = to_bytes(&ckpt).unwrap();
        prop_assert_eq!(from_bytes(&bytes).unwrap(), ckpt);
    }
}
