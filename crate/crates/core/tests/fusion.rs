//! Every fusion rule against the unfused computation evaluated in f64.
//!
//! The fused parameters are stored in f32; evaluating both sides in f64 isolates
//! the algebra from kernel rounding, which is why 1e-6 is attainable.

mod common;

use common::*;
use fastvit_core::reparam::{
    add_identity, bn_branch_to_conv, fold_bn_post, fold_bn_pre, fuse_cpe, fuse_mobileone, fuse_repmixer, pad_kernel,
    sum_branches, MobileOneBranches,
};
use proptest::prelude::*;

const TOL: f64 = 1e-6;
const CASES: u32 = 128;

#[derive(Debug, Clone)]
struct Geometry {
    groups: usize,
    in_per_group: usize,
    out_per_group: usize,
    k: (usize, usize),
    stride: (usize, usize),
    padding: (usize, usize),
    hw: (usize, usize),
}

impl Geometry {
    fn in_c(&self) -> usize {
        self.groups * self.in_per_group
    }
    fn out_c(&self) -> usize {
        self.groups * self.out_per_group
    }
    fn conv(&self, seed: u64) -> fastvit_core::ConvParams {
        rand_conv(seed, self.out_c(), self.in_c(), self.k, self.stride, self.padding, self.groups)
    }
    fn input(&self, seed: u64) -> fastvit_core::Tensor {
        rand_tensor(seed, [1, self.in_c(), self.hw.0, self.hw.1])
    }
}

fn geometry() -> impl Strategy<Value = Geometry> {
    (
        1usize..=3,
        1usize..=3,
        1usize..=3,
        (1usize..=5, 1usize..=5),
        (1usize..=2, 1usize..=2),
        (0usize..=2, 0usize..=2),
        (3usize..=9, 3usize..=9),
    )
        .prop_filter_map("kernel fits", |(g, i, o, k, s, p, hw)| {
            (hw.0 + 2 * p.0 >= k.0 && hw.1 + 2 * p.1 >= k.1).then_some(Geometry {
                groups: g,
                in_per_group: i,
                out_per_group: o,
                k,
                stride: s,
                padding: p,
                hw,
            })
        })
}

/// Square-channel, stride-1, centred-padding geometries with odd kernels.
fn same_geometry() -> impl Strategy<Value = Geometry> {
    (1usize..=4, 1usize..=3, (0usize..=2, 0usize..=2), (3usize..=8, 3usize..=8)).prop_map(|(g, cpg, (a, b), hw)| {
        let k = (2 * a + 1, 2 * b + 1);
        Geometry {
            groups: g,
            in_per_group: cpg,
            out_per_group: cpg,
            k,
            stride: (1, 1),
            padding: (a, b),
            hw,
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(CASES))]

    #[test]
    fn fold_bn_post_equals_conv_then_bn(g in geometry(), seed in any::<u64>()) {
        let conv = g.conv(seed);
        let bn = rand_bn(seed, g.out_c());
        let x = g.input(seed);
        let (y, dims) = conv_f64(&to_f64(&x), x.dims(), &conv);
        let want = bn_f64(&y, dims, &bn);
        let (got, _) = conv_f64(&to_f64(&x), x.dims(), &fold_bn_post(&conv, &bn).unwrap());
        prop_assert!(max_diff(&got, &want) <= TOL, "{}", max_diff(&got, &want));
    }

    #[test]
    fn fold_bn_pre_equals_pad_bn_then_conv(g in geometry(), seed in any::<u64>()) {
        let conv = g.conv(seed);
        let bn = rand_bn(seed, g.in_c());
        let x = g.input(seed);
        let (padded, pdims) = pad_f64(&to_f64(&x), x.dims(), g.padding.0, g.padding.1);
        let normed = bn_f64(&padded, pdims, &bn);
        let mut valid = conv.clone();
        valid.padding = (0, 0);
        let (want, _) = conv_f64(&normed, pdims, &valid);
        let (got, _) = conv_f64(&to_f64(&x), x.dims(), &fold_bn_pre(&bn, &conv).unwrap());
        prop_assert!(max_diff(&got, &want) <= TOL, "{}", max_diff(&got, &want));
    }

    #[test]
    fn bn_branch_to_conv_equals_bn(g in same_geometry(), seed in any::<u64>()) {
        let bn = rand_bn(seed, g.in_c());
        let x = g.input(seed);
        let want = bn_f64(&to_f64(&x), x.dims(), &bn);
        let conv = bn_branch_to_conv(&bn, g.k, g.groups).unwrap();
        let (got, _) = conv_f64(&to_f64(&x), x.dims(), &conv);
        prop_assert!(max_diff(&got, &want) <= TOL, "{}", max_diff(&got, &want));
    }

    #[test]
    fn pad_kernel_preserves_output(g in geometry(), grow in (0usize..=2, 0usize..=2), seed in any::<u64>()) {
        let conv = g.conv(seed);
        let x = g.input(seed);
        let target = (g.k.0 + 2 * grow.0, g.k.1 + 2 * grow.1);
        let (want, wdims) = conv_f64(&to_f64(&x), x.dims(), &conv);
        let padded = pad_kernel(&conv, target).unwrap();
        prop_assert_eq!(padded.kernel, target);
        let (got, gdims) = conv_f64(&to_f64(&x), x.dims(), &padded);
        prop_assert_eq!(wdims, gdims);
        prop_assert!(max_diff(&got, &want) <= TOL);
    }

    #[test]
    fn sum_branches_equals_sum_of_outputs(g in geometry(), m in 1usize..=4, seed in any::<u64>()) {
        let branches: Vec<_> = (0..m as u64).map(|i| g.conv(seed.wrapping_add(i))).collect();
        let x = g.input(seed);
        let xs = to_f64(&x);
        let mut want: Option<Vec<f64>> = None;
        for b in &branches {
            let (y, _) = conv_f64(&xs, x.dims(), b);
            want = Some(match want {
                None => y,
                Some(acc) => acc.iter().zip(&y).map(|(a, b)| a + b).collect(),
            });
        }
        let (got, _) = conv_f64(&xs, x.dims(), &sum_branches(&branches).unwrap());
        prop_assert!(max_diff(&got, &want.unwrap()) <= TOL);
    }

    #[test]
    fn add_identity_adds_scaled_input(g in same_geometry(), seed in any::<u64>(), scaled in any::<bool>()) {
        let conv = g.conv(seed);
        let x = g.input(seed);
        let scale: Vec<f32> = fastvit_core::init::Initializer::new(seed).uniform(g.out_c(), -1.5, 1.5);
        let s = scaled.then_some(scale.as_slice());
        let (y, dims) = conv_f64(&to_f64(&x), x.dims(), &conv);
        let plane = dims[2] * dims[3];
        let want: Vec<f64> = y
            .iter()
            .zip(x.data())
            .enumerate()
            .map(|(i, (v, xv))| v + s.map_or(1.0, |s| s[i / plane] as f64) * *xv as f64)
            .collect();
        let (got, _) = conv_f64(&to_f64(&x), x.dims(), &add_identity(&conv, s).unwrap());
        prop_assert!(max_diff(&got, &want) <= TOL);
    }

    #[test]
    fn mobileone_branches_fuse(
        g in same_geometry(), n in 1usize..=4, scale in any::<bool>(), identity in any::<bool>(), seed in any::<u64>()
    ) {
        let kxk: Vec<_> = (0..n as u64)
            .map(|i| (g.conv(seed.wrapping_add(i)), rand_bn(seed.wrapping_add(i), g.out_c())))
            .collect();
        let scale_branch = scale.then(|| {
            let mut c = rand_conv(seed ^ 1, g.out_c(), g.in_c(), (1, 1), (1, 1), (0, 0), g.groups);
            c.padding = (0, 0);
            (c, rand_bn(seed ^ 2, g.out_c()))
        });
        let branches = MobileOneBranches {
            kxk,
            scale: scale_branch,
            identity: identity.then(|| rand_bn(seed ^ 3, g.in_c())),
        };
        let x = g.input(seed);
        let xs = to_f64(&x);
        let mut outs = Vec::new();
        for (c, bn) in branches.kxk.iter().chain(branches.scale.iter()) {
            let (y, d) = conv_f64(&xs, x.dims(), c);
            outs.push(bn_f64(&y, d, bn));
        }
        if let Some(bn) = &branches.identity {
            outs.push(bn_f64(&xs, x.dims(), bn));
        }
        let want: Vec<f64> = (0..outs[0].len()).map(|i| outs.iter().map(|o| o[i]).sum()).collect();
        let fused = fuse_mobileone(&branches).unwrap();
        let (got, _) = conv_f64(&xs, x.dims(), &fused.conv);
        prop_assert!(max_diff(&got, &want) <= TOL, "{}", max_diff(&got, &want));
    }

    #[test]
    fn repmixer_fuses_with_and_without_layer_scale(
        c in 1usize..=6, half in 0usize..=3, hw in (3usize..=9, 3usize..=9), ls in any::<bool>(), seed in any::<u64>()
    ) {
        let k = 2 * half + 1;
        let dw = rand_conv(seed, c, c, (k, k), (1, 1), (half, half), c);
        let bn = rand_bn(seed, c);
        let scale = fastvit_core::init::Initializer::new(seed).uniform(c, 0.1, 1.5);
        let x = rand_tensor(seed, [1, c, hw.0, hw.1]);
        let xs = to_f64(&x);
        let (padded, pdims) = pad_f64(&xs, x.dims(), half, half);
        let mut valid = dw.clone();
        valid.padding = (0, 0);
        let (mixed, _) = conv_f64(&bn_f64(&padded, pdims, &bn), pdims, &valid);
        let plane = hw.0 * hw.1;
        let want: Vec<f64> = mixed
            .iter()
            .zip(&xs)
            .enumerate()
            .map(|(i, (m, xv))| xv + if ls { scale[i / plane] as f64 } else { 1.0 } * m)
            .collect();
        let fused = fuse_repmixer(&dw, &bn, ls.then_some(scale.as_slice())).unwrap();
        let (got, _) = conv_f64(&xs, x.dims(), &fused.conv);
        prop_assert!(max_diff(&got, &want) <= TOL);
    }

    #[test]
    fn cpe_fuses(c in 1usize..=6, half in 0usize..=3, seed in any::<u64>()) {
        let k = 2 * half + 1;
        let dw = rand_conv(seed, c, c, (k, k), (1, 1), (half, half), c);
        let x = rand_tensor(seed, [1, c, 7, 5]);
        let xs = to_f64(&x);
        let (y, _) = conv_f64(&xs, x.dims(), &dw);
        let want: Vec<f64> = y.iter().zip(&xs).map(|(a, b)| a + b).collect();
        let (got, _) = conv_f64(&xs, x.dims(), &fuse_cpe(&dw).unwrap().conv);
        prop_assert!(max_diff(&got, &want) <= TOL);
    }
}

#[test]
fn sum_branches_names_the_mismatched_branch() {
    let a = rand_conv(1, 2, 2, (3, 3), (1, 1), (1, 1), 1);
    let b = rand_conv(2, 2, 2, (1, 1), (1, 1), (0, 0), 1);
    let err = sum_branches(&[a.clone(), a, b]).unwrap_err().to_string();
    assert!(err.contains("branch 2"), "{err}");
}

#[test]
fn identity_needs_odd_kernel_and_square_channels() {
    let even = rand_conv(1, 2, 2, (2, 2), (1, 1), (1, 1), 1);
    assert!(add_identity(&even, None).is_err());
    let wide = rand_conv(1, 3, 2, (3, 3), (1, 1), (1, 1), 1);
    assert!(add_identity(&wide, None).is_err());
    let strided = rand_conv(1, 2, 2, (3, 3), (2, 2), (1, 1), 1);
    assert!(add_identity(&strided, None).is_err());
}

#[test]
fn pad_kernel_rejects_shrinking_and_parity_change() {
    let c = rand_conv(1, 2, 2, (3, 3), (1, 1), (1, 1), 1);
    assert!(pad_kernel(&c, (1, 1)).is_err());
    assert!(pad_kernel(&c, (4, 4)).is_err());
    assert_eq!(pad_kernel(&c, (3, 3)).unwrap(), c);
}

#[test]
fn fold_bn_rejects_channel_mismatch() {
    let c = rand_conv(1, 4, 2, (3, 3), (1, 1), (1, 1), 1);
    assert!(fold_bn_post(&c, &rand_bn(1, 2)).is_err());
    assert!(fold_bn_pre(&rand_bn(1, 4), &c).is_err());
}

#[test]
fn identity_bn_folds_to_the_same_conv() {
    let c = rand_conv(5, 3, 3, (3, 3), (1, 1), (1, 1), 1);
    let id = fastvit_core::BatchNormParams::identity(3, 0.0);
    assert_eq!(fold_bn_post(&c, &id).unwrap(), c);
    assert_eq!(fold_bn_pre(&id, &c).unwrap(), c);
}
