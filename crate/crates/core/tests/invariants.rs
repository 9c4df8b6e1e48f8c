use std::sync::Arc;

use approx::assert_relative_eq;
use cgrom_core::fem::solver::DenseCholeskySolver;
use cgrom_core::fem::{interpolation_matrix, BoundaryCondition, FemProblem, StructuredGrid};
use cgrom_core::io::csv_string;
use cgrom_core::media::{level_cut, PhaseSpec};
use cgrom_core::model::LinkFunction;
use proptest::prelude::*;

fn bc_coeffs() -> impl Strategy<Value = [f64; 4]> {
    prop::array::uniform4(-2000.0..2000.0f64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn patch_test_holds_for_any_corner_bc(nx in 1usize..6, ny in 1usize..6, a in bc_coeffs()) {
        let g = StructuredGrid::new_2d(nx, ny).unwrap();
        let bc = BoundaryCondition::corner(a);
        let p = FemProblem::new(g.clone(), bc.clone(), Arc::new(DenseCholeskySolver)).unwrap();
        let u = p.solve(&vec![1.0; g.n_elements()]).unwrap();
        let scale = a.iter().map(|v| v.abs()).fold(1.0, f64::max);
        for i in 0..g.n_nodes() {
            prop_assert!((u.u[i] - bc.u_hat(g.node_coords(i))).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn constant_boundary_data_gives_a_constant_solution(
        n in 2usize..12,
        lam in prop::collection::vec(0.1..10.0f64, 12),
        c in 0.1..10.0f64,
    ) {
        // a = [a0, 0, 0, 0]: pure Dirichlet corner and no flux, so u ≡ a0
        let g = StructuredGrid::new_1d(n).unwrap();
        let p = FemProblem::new(
            g.clone(),
            BoundaryCondition::corner([1.5, 0.0, 0.0, 0.0]),
            Arc::new(DenseCholeskySolver),
        )
        .unwrap();
        let l: Vec<f64> = lam[..n].iter().map(|v| v * c).collect();
        let u = p.solve(&l).unwrap();
        for v in &u.u {
            prop_assert!((v - 1.5).abs() < 1e-12);
        }
    }

    #[test]
    fn interpolation_rows_sum_to_one(cx in 1usize..5, cy in 1usize..5, rx in 1usize..5, ry in 1usize..5) {
        let cg = StructuredGrid::new_2d(cx, cy).unwrap();
        let fg = StructuredGrid::new_2d(cx * rx, cy * ry).unwrap();
        let w = interpolation_matrix(&cg, &fg).unwrap();
        prop_assert_eq!(w.nrows(), fg.n_nodes());
        for i in 0..w.nrows() {
            let s: f64 = w.row(i).values().iter().sum();
            prop_assert!((s - 1.0).abs() <= 1e-12);
            prop_assert!(w.row(i).values().iter().all(|&v| v >= -1e-15));
        }
    }

    #[test]
    fn level_cut_is_two_valued_and_counts_the_high_phase(
        f in prop::collection::vec(-4.0..4.0f64, 1..200),
        cut in -3.0..3.0f64,
        lo in 0.1..5.0f64,
        ratio in 1.0..100.0f64,
    ) {
        let phases = PhaseSpec::new(lo, lo * ratio).unwrap();
        let s = level_cut(&f, cut, phases);
        let n_hi = f.iter().filter(|&&v| v >= cut).count();
        prop_assert_eq!(s.volume_fraction_hi, n_hi as f64 / f.len() as f64);
        for (v, l) in f.iter().zip(&s.lam_f) {
            prop_assert_eq!(*l, if *v < cut { phases.lam_lo } else { phases.lam_hi });
        }
    }

    #[test]
    fn links_invert_inside_their_range(t in 0.001..0.999f64, lo in 0.1..5.0f64, ratio in 1.5..100.0f64) {
        let phases = PhaseSpec::new(lo, lo * ratio).unwrap();
        let sig = LinkFunction::sigmoid_with_margin(phases, 0.01);
        let LinkFunction::Sigmoid { lo: a, hi: b } = sig else { unreachable!() };
        let lam = a + t * (b - a);
        for link in [sig, LinkFunction::Log, LinkFunction::Identity] {
            let z = link.inverse(lam).unwrap();
            assert_relative_eq!(link.forward(z), lam, max_relative = 1e-10);
            // monotone increasing
            prop_assert!(link.jacobian(z) > 0.0);
        }
    }

    #[test]
    fn csv_floats_round_trip_exactly(rows in prop::collection::vec(prop::array::uniform3(any::<f64>()), 1..20)) {
        let rows: Vec<Vec<f64>> = rows
            .into_iter()
            .map(|r| r.into_iter().filter(|v| v.is_finite()).collect::<Vec<_>>())
            .filter(|r| r.len() == 3)
            .collect();
        let text = csv_string(&["a", "b", "c"], &rows, "0123456789abcdef");
        let parsed: Vec<Vec<f64>> = text
            .lines()
            .skip(2)
            .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
            .collect();
        prop_assert_eq!(parsed.len(), rows.len());
        for (p, r) in parsed.iter().zip(&rows) {
            for (x, y) in p.iter().zip(r) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }
}
