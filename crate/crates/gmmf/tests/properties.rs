//! Property-based checks of the estimator algebra: path equivalences,
//! decomposition identities, and scale equivariance on randomly generated
//! grouped datasets.

use nalgebra::DMatrix;
use proptest::prelude::*;

use gmmf::dataset::{grouped_view, Dataset};
use gmmf::estimators::{first_stage, gmmf, ols, two_sls};
use gmmf::firststage::{diagnostics, f_group, f_robust};

const TOL: f64 = 1e-9;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// One group: a centre for x, a centre for y, and per-observation offsets.
#[derive(Debug, Clone)]
struct Group {
    mx: f64,
    my: f64,
    dx: Vec<f64>,
    dy: Vec<f64>,
}

fn group_strategy(balanced_n: Option<usize>) -> impl Strategy<Value = Group> {
    let sizes = match balanced_n {
        Some(n) => (n..=n).boxed(),
        None => (2usize..=6).boxed(),
    };
    sizes.prop_flat_map(|n| {
        (
            -3.0..3.0f64,
            -3.0..3.0f64,
            prop::collection::vec(-2.0..2.0f64, n),
            prop::collection::vec(-2.0..2.0f64, n),
        )
            .prop_map(|(mx, my, dx, dy)| Group { mx, my, dx, dy })
    })
}

fn assemble(groups: Vec<Group>) -> Option<Dataset> {
    let s = groups.len();
    let mut y = Vec::new();
    let mut x = Vec::new();
    let mut idx = Vec::new();
    for (g, grp) in groups.iter().enumerate() {
        // Skip datasets with a (near-)constant x within some group: the
        // first-stage residual block is singular by construction.
        let m = grp.dx.iter().sum::<f64>() / grp.dx.len() as f64;
        if grp.dx.iter().map(|v| (v - m).powi(2)).sum::<f64>() < 1e-3 {
            return None;
        }
        for (dx, dy) in grp.dx.iter().zip(&grp.dy) {
            x.push(grp.mx + dx);
            y.push(grp.my + dy);
            idx.push(g);
        }
    }
    let n = x.len();
    let mut z = DMatrix::zeros(n, s);
    for (i, &g) in idx.iter().enumerate() {
        z[(i, g)] = 1.0;
    }
    Dataset::new(y, x, z).ok()
}

fn grouped_dataset() -> impl Strategy<Value = Dataset> {
    prop::collection::vec(group_strategy(None), 2..=5)
        .prop_filter_map("degenerate group", assemble)
}

fn balanced_dataset() -> impl Strategy<Value = Dataset> {
    (3usize..=6)
        .prop_flat_map(|n| prop::collection::vec(group_strategy(Some(n)), 2..=4))
        .prop_filter_map("degenerate group", assemble)
}

/// Equal within-group residual variance for x: each group is `mx +/- c`
/// with a common half-spread `c`, so all `sigma2_v_s` coincide.
fn equal_variance_dataset() -> impl Strategy<Value = Dataset> {
    (
        0.5..2.0f64,
        prop::collection::vec((-3.0..3.0f64, -3.0..3.0f64, prop::collection::vec(-2.0..2.0f64, 4)), 2..=4),
    )
        .prop_filter_map("degenerate group", |(c, specs)| {
            let groups = specs
                .into_iter()
                .map(|(mx, my, dy)| Group {
                    mx,
                    my,
                    dx: vec![-c, -c, c, c],
                    dy,
                })
                .collect();
            assemble(groups)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    /// The grouped closed form of 2SLS agrees with the generic matrix path.
    #[test]
    fn two_sls_grouped_path_matches_generic(d in grouped_dataset()) {
        let gv = grouped_view(&d).unwrap();
        let (generic, grouped) = (two_sls(&d, None), two_sls(&d, Some(&gv)));
        if let (Ok(a), Ok(b)) = (generic, grouped) {
            prop_assert!(rel(a.beta_hat, b.beta_hat) < TOL);
            if let (Some(va), Some(vb)) = (a.var_robust, b.var_robust) {
                prop_assert!(rel(va, vb) < TOL);
            }
        }
    }

    /// 2SLS and GMMf weights sum to one and reproduce the estimate as a
    /// weighted combination of the per-group Wald ratios.
    #[test]
    fn weight_decompositions_are_exact(d in grouped_dataset()) {
        let gv = grouped_view(&d).unwrap();
        let fs = first_stage(&d, Some(&gv)).unwrap();
        let (e2, ef) = match (two_sls(&d, Some(&gv)), gmmf(&d, &fs, Some(&gv))) {
            (Ok(a), Ok(b)) => (a, b),
            _ => return Ok(()),
        };
        let beta_s: Vec<f64> = gv
            .xbar_s()
            .iter()
            .zip(gv.ybar_s())
            .map(|(&xb, &yb)| yb / xb)
            .collect();
        prop_assume!(beta_s.iter().all(|b| b.is_finite() && b.abs() < 1e6));
        for e in [&e2, &ef] {
            let w = e.weights.as_ref().unwrap();
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < TOL);
            let combined: f64 = w.iter().zip(&beta_s).map(|(w, b)| w * b).sum();
            prop_assert!(rel(e.beta_hat, combined) < TOL);
        }
    }

    /// The robust F statistic equals the mean of the per-group statistics.
    #[test]
    fn f_robust_is_mean_of_group_f(d in grouped_dataset()) {
        let gv = grouped_view(&d).unwrap();
        let fs = first_stage(&d, Some(&gv)).unwrap();
        if let (Ok(fr), Ok(fg)) = (f_robust(&d, &fs), f_group(&gv, &fs)) {
            let mean = fg.iter().sum::<f64>() / fg.len() as f64;
            prop_assert!(rel(fr, mean) < TOL);
        }
    }

    /// With equal first-stage residual variances across groups, the GMMf
    /// reweighting is inert and the estimator collapses to 2SLS.
    #[test]
    fn equal_variances_make_gmmf_equal_two_sls(d in equal_variance_dataset()) {
        let gv = grouped_view(&d).unwrap();
        let fs = first_stage(&d, Some(&gv)).unwrap();
        if let (Ok(e2), Ok(ef)) = (two_sls(&d, Some(&gv)), gmmf(&d, &fs, Some(&gv))) {
            prop_assert!(rel(e2.beta_hat, ef.beta_hat) < TOL);
        }
    }

    /// Balanced group sizes equalise the effective and nonrobust F.
    #[test]
    fn balanced_groups_equalise_f_effective_and_f(d in balanced_dataset()) {
        let fs = first_stage(&d, None).unwrap();
        if let Ok(diag) = diagnostics(&d, &fs, None) {
            prop_assert!(rel(diag.f_effective, diag.f_nonrobust) < TOL);
        }
    }

    /// Scaling y by c scales every estimator by c; scaling x by c divides
    /// every estimator by c and leaves all first-stage F statistics alone.
    #[test]
    fn scale_equivariance(d in grouped_dataset(), c in prop_oneof![0.25..0.9f64, 1.2..4.0f64]) {
        let gv = grouped_view(&d).unwrap();
        let fs = first_stage(&d, Some(&gv)).unwrap();
        let base = match (
            ols(d.y(), d.x()),
            two_sls(&d, Some(&gv)),
            gmmf(&d, &fs, Some(&gv)),
            diagnostics(&d, &fs, Some(&gv)),
        ) {
            (Ok(a), Ok(b), Ok(g), Ok(diag)) => (a, b, g, diag),
            _ => return Ok(()),
        };

        let dy = Dataset::new(
            d.y().iter().map(|v| c * v).collect(),
            d.x().iter().cloned().collect(),
            d.z().clone(),
        )
        .unwrap();
        let gvy = grouped_view(&dy).unwrap();
        let fsy = first_stage(&dy, Some(&gvy)).unwrap();
        prop_assert!(rel(ols(dy.y(), dy.x()).unwrap().beta_hat, c * base.0.beta_hat) < TOL);
        prop_assert!(rel(two_sls(&dy, Some(&gvy)).unwrap().beta_hat, c * base.1.beta_hat) < TOL);
        prop_assert!(rel(gmmf(&dy, &fsy, Some(&gvy)).unwrap().beta_hat, c * base.2.beta_hat) < TOL);

        let dx = Dataset::new(
            d.y().iter().cloned().collect(),
            d.x().iter().map(|v| c * v).collect(),
            d.z().clone(),
        )
        .unwrap();
        let gvx = grouped_view(&dx).unwrap();
        let fsx = first_stage(&dx, Some(&gvx)).unwrap();
        prop_assert!(rel(ols(dx.y(), dx.x()).unwrap().beta_hat, base.0.beta_hat / c) < TOL);
        prop_assert!(rel(two_sls(&dx, Some(&gvx)).unwrap().beta_hat, base.1.beta_hat / c) < TOL);
        prop_assert!(rel(gmmf(&dx, &fsx, Some(&gvx)).unwrap().beta_hat, base.2.beta_hat / c) < TOL);

        let diag = diagnostics(&dx, &fsx, Some(&gvx)).unwrap();
        prop_assert!(rel(diag.f_nonrobust, base.3.f_nonrobust) < TOL);
        prop_assert!(rel(diag.f_robust, base.3.f_robust) < TOL);
        prop_assert!(rel(diag.f_effective, base.3.f_effective) < TOL);
    }
}
