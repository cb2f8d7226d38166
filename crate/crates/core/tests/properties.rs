mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use robust_spd::annealer::{random_move, CandidateSets};
use robust_spd::contrasts::build_contrasts;
use robust_spd::criterion::{evaluate, rescaled_loss};
use robust_spd::updates::{apply_delta, propose, refresh, Move, MoveKind};
use robust_spd::{Factor, FactorLayout, Role, SplitPlotDesign, VarianceSpec};

use common::{random_instance, rel};

fn var_strategy() -> impl Strategy<Value = VarianceSpec> {
    prop_oneof![Just(0.0), 0.01f64..10.0].prop_map(|d| VarianceSpec::with_ratio(d).unwrap())
}

/// The move that undoes `mv` on `before`.
fn inverse(mv: &Move, before: &SplitPlotDesign) -> Move {
    let plots = before.plots();
    match mv {
        Move::WholePlotExchange { plots: idx, .. } => Move::WholePlotExchange {
            plots: idx.clone(),
            wholes: idx.iter().map(|&i| plots[i].whole.clone()).collect(),
        },
        Move::Interchange { .. } => mv.clone(),
        Move::SubplotExchange { plot, subplots, .. } => Move::SubplotExchange {
            plot: *plot,
            subplots: subplots.clone(),
            replacements: subplots.iter().map(|&k| plots[*plot].subplots[k].clone()).collect(),
        },
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn contrast_columns_are_centred_and_orthogonal(levels in 2usize..=9) {
        let layout = FactorLayout::new(vec![
            Factor::new("W", 2, Role::WholePlot),
            Factor::new("S", levels, Role::Subplot),
        ]).unwrap();
        let c = build_contrasts(&layout);
        let t = c.table(1);
        prop_assert_eq!(t.ncols(), levels - 1);
        for j in 0..t.ncols() {
            prop_assert!(t.column(j).sum().abs() < 1e-10);
            prop_assert!((c.mean_square(1, j + 1) - 1.0).abs() < 1e-10);
            for k in 0..j {
                prop_assert!(t.column(j).dot(&t.column(k)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn csv_round_trip(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(&mut rng, VarianceSpec::default(), 1.0, 32);
        let layout = inst.problem.layout();
        let text = inst.design.to_csv(layout);
        prop_assert_eq!(SplitPlotDesign::from_csv(&text, layout).unwrap(), inst.design);
    }

    #[test]
    fn report_identities(seed in any::<u64>(), var in var_strategy(), alpha in 0.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(&mut rng, var, alpha, 24);
        let r = evaluate(&inst.problem, &inst.design).unwrap();
        prop_assert!(r.phi >= -1e-9);
        let lhs = r.loss() * r.pi();
        let rhs = 1.0 + r.big_n as f64 * alpha * alpha * r.phi;
        prop_assert!(rel(lhs, rhs) <= 1e-10, "{} vs {}", lhs, rhs);
        let k = (r.p + 1) as f64;
        prop_assert!(rel(r.loss_root.powf(k), r.loss()) <= 1e-9);
    }

    #[test]
    fn uniform_rescaling_keeps_the_ranking(seed in any::<u64>(), c in 0.2f64..5.0, var in var_strategy()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_instance(&mut rng, var, 1.0, 20);
        let pr = &a.problem;
        let sizes = a.design.plot_sizes();
        let Ok(other) = robust_spd::annealer::initial_design(pr.layout(), &sizes, &mut rng) else {
            return Ok(());
        };
        let Ok(rb) = evaluate(pr, &other) else { return Ok(()) };
        let ra = evaluate(pr, &a.design).unwrap();
        let scales = vec![c; pr.requirement().p()];
        let sa = rescaled_loss(&pr.matrices(&a.design).unwrap(), &scales, pr.var(), pr.big_n(), 1.0).unwrap();
        let sb = rescaled_loss(&pr.matrices(&other).unwrap(), &scales, pr.var(), pr.big_n(), 1.0).unwrap();
        let shift = -2.0 * scales.len() as f64 * c.ln();
        prop_assert!((sa.log_loss - ra.log_loss - shift).abs() <= 1e-8 * (1.0 + ra.log_loss.abs()));
        prop_assert!((sb.log_loss - rb.log_loss - shift).abs() <= 1e-8 * (1.0 + rb.log_loss.abs()));
        if (ra.log_loss - rb.log_loss).abs() > 1e-6 {
            prop_assert_eq!(ra.log_loss < rb.log_loss, sa.log_loss < sb.log_loss);
        }
    }

    #[test]
    fn move_then_inverse_restores_state(seed in any::<u64>(), kind in 0usize..3, var in var_strategy()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(&mut rng, var, 1.0, 24);
        let pr = &inst.problem;
        let kind = [MoveKind::WholePlotExchange, MoveKind::Interchange, MoveKind::SubplotExchange][kind];
        let cands = CandidateSets::new(pr.layout());
        let e_max = vec![2; inst.design.b()];
        let Some(mv) = random_move(kind, &inst.design, &cands, inst.design.b().min(2), &e_max, &mut rng) else {
            return Ok(());
        };
        let st = refresh(pr, &inst.design).unwrap();
        let Ok((after, delta)) = propose(pr, &inst.design, &st, &mv) else { return Ok(()) };
        let Ok(mid) = apply_delta(&st, &delta, pr.var()) else { return Ok(()) };
        let (back, delta) = propose(pr, &after, &mid, &inverse(&mv, &inst.design)).unwrap();
        prop_assert_eq!(&back, &inst.design);
        let Ok(end) = apply_delta(&mid, &delta, pr.var()) else { return Ok(()) };
        prop_assert!((end.logdet_m1() - st.logdet_m1()).abs() <= 1e-9 * (1.0 + st.logdet_m1().abs()));
        let scale = st.m3().abs().max();
        prop_assert!((end.m3() - st.m3()).abs().max() <= 1e-9 * scale);
        let scale = st.m2_inv().abs().max();
        prop_assert!((end.m2_inv() - st.m2_inv()).abs().max() <= 1e-8 * scale);
    }
}
