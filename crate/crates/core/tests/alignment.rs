use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use xsensor_core::align::{apply_fdm, fit_fdm, histogram_match, pixel_moments};
use xsensor_core::MultiBandRaster;

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v
}

/// Histogram specification by sorting: the k-th smallest source sample takes the
/// k-th smallest reference value.
fn sort_oracle(src: &[f64], reference: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..src.len()).collect();
    idx.sort_by(|&a, &b| src[a].partial_cmp(&src[b]).unwrap());
    let r = sorted(reference.to_vec());
    let mut out = vec![0.0; src.len()];
    for (k, &i) in idx.iter().enumerate() {
        out[i] = r[k];
    }
    out
}

/// Correlated Gaussian pixels `x = L z + m`.
fn gaussian_raster(n: usize, seed: u64, l: [[f64; 3]; 3], m: [f64; 3]) -> MultiBandRaster {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bands: Vec<Vec<f32>> = (0..3).map(|_| Vec::with_capacity(n)).collect();
    for _ in 0..n {
        let z: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
        for (r, band) in bands.iter_mut().enumerate() {
            band.push((m[r] + (0..3).map(|c| l[r][c] * z[c]).sum::<f64>()) as f32);
        }
    }
    MultiBandRaster::from_f32(n / 100, 100, bands).unwrap()
}

fn rel_frobenius(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

fn matmul(a: &[f64], b: &[f64], c: usize) -> Vec<f64> {
    (0..c * c)
        .map(|k| (0..c).map(|t| a[(k / c) * c + t] * b[t * c + k % c]).sum())
        .collect()
}

fn transpose(a: &[f64], c: usize) -> Vec<f64> {
    (0..c * c).map(|k| a[(k % c) * c + k / c]).collect()
}

#[test]
fn hm_matches_sort_oracle_for_offset_bands() {
    let src: Vec<f32> = (0..64).map(|i| ((i * 37) % 64) as f32 * 0.5).collect();
    let reference: Vec<f32> = src.iter().map(|v| v * 1.7 + 3.0).rev().collect();
    let s = MultiBandRaster::from_f32(8, 8, vec![src.clone()]).unwrap();
    let r = MultiBandRaster::from_f32(8, 8, vec![reference.clone()]).unwrap();
    let out = histogram_match(&s, &r).unwrap().band(0).to_f64();
    let to64 = |v: &[f32]| v.iter().map(|&x| x as f64).collect::<Vec<_>>();
    assert_eq!(out, sort_oracle(&to64(&src), &to64(&reference)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn hm_is_monotone(
        src in prop::collection::vec(-100i32..100, 2..120),
        reference in prop::collection::vec(-1000i32..1000, 2..150),
    ) {
        let s = MultiBandRaster::from_f32(src.len(), 1, vec![src.iter().map(|&v| v as f32).collect()]).unwrap();
        let r = MultiBandRaster::from_f32(reference.len(), 1, vec![reference.iter().map(|&v| v as f32).collect()]).unwrap();
        let out = histogram_match(&s, &r).unwrap().band(0).to_f64();
        let lo = *reference.iter().min().unwrap() as f64;
        let hi = *reference.iter().max().unwrap() as f64;
        for i in 0..src.len() {
            prop_assert!(out[i] >= lo && out[i] <= hi);
            for j in 0..src.len() {
                if src[i] <= src[j] {
                    prop_assert!(out[i] <= out[j]);
                }
            }
        }
    }

    #[test]
    fn hm_transfers_histogram_exactly_when_tie_free(seed in any::<u64>(), n in 2usize..300) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let src: Vec<f32> = perm.iter().map(|&p| p as f32 * 0.25 - 7.0).collect();
        let reference: Vec<f32> = (0..n).map(|i| (i as f32).powf(1.3) + rng.gen_range(0.0..0.5f32)).collect();
        let s = MultiBandRaster::from_f32(n, 1, vec![src]).unwrap();
        let r = MultiBandRaster::from_f32(n, 1, vec![reference]).unwrap();
        let out = histogram_match(&s, &r).unwrap();
        prop_assert_eq!(sorted(out.band(0).to_f64()), sorted(r.band(0).to_f64()));
    }
}

#[test]
fn fdm_transfers_moments_on_gaussian_fixtures() {
    for seed in 0..4 {
        let s = gaussian_raster(
            20_000,
            seed,
            [[2.0, 0.0, 0.0], [0.7, 1.1, 0.0], [-0.4, 0.3, 0.6]],
            [10.0, -3.0, 0.5],
        );
        let t = gaussian_raster(
            12_000,
            seed + 100,
            [[0.5, 0.0, 0.0], [0.2, 0.9, 0.0], [0.1, -0.6, 1.4]],
            [1.0, 2.0, 3.0],
        );
        let tr = fit_fdm(&s, &t).unwrap();
        let (_, _, cs) = pixel_moments(&s);
        let (_, mt, ct) = pixel_moments(&t);
        let a = &tr.matrix;
        let asat = matmul(&matmul(a, &cs, 3), &transpose(a, 3), 3);
        assert!(rel_frobenius(&asat, &ct) < 1e-6, "{seed}");

        let out = apply_fdm(&s, &tr).unwrap();
        let (_, mo, co) = pixel_moments(&out);
        assert!(rel_frobenius(&mo, &mt) < 1e-6, "{seed}: {mo:?} {mt:?}");
        assert!(rel_frobenius(&co, &ct) < 1e-5, "{seed}");

        let again = fit_fdm(&out, &t).unwrap();
        let eye = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        assert!(rel_frobenius(&again.matrix, &eye) < 1e-5, "{seed}");
    }
}

#[test]
fn alignment_is_pixelwise() {
    let s = gaussian_raster(1_000, 3, [[1.0, 0.0, 0.0], [0.5, 1.0, 0.0], [0.0, 0.5, 1.0]], [0.0; 3]);
    let t = gaussian_raster(1_000, 4, [[2.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 3.0]], [1.0; 3]);
    let n = s.pixel_count();
    let perm: Vec<usize> = (0..n).map(|i| (i * 7919) % n).collect();
    let permute = |r: &MultiBandRaster| {
        let bands = (0..3)
            .map(|b| perm.iter().map(|&p| r.band(b).get(p) as f32).collect())
            .collect();
        MultiBandRaster::from_f32(r.width(), r.height(), bands).unwrap()
    };
    let direct = apply_fdm(&s, &fit_fdm(&s, &t).unwrap()).unwrap();
    let via = apply_fdm(&permute(&s), &fit_fdm(&permute(&s), &t).unwrap()).unwrap();
    let hm = histogram_match(&s, &t).unwrap();
    let hm_via = histogram_match(&permute(&s), &t).unwrap();
    for b in 0..3 {
        for (k, &p) in perm.iter().enumerate() {
            assert!((via.band(b).get(k) - direct.band(b).get(p)).abs() < 1e-5);
            assert_eq!(hm_via.band(b).get(k), hm.band(b).get(p));
        }
    }
}
