use ballpiston::dynamics::*;
use ballpiston::estimators::{kl_divergence, Histogram};
use ballpiston::geometry::*;
use ballpiston::kernel::*;
use ballpiston::sampling::*;
use proptest::prelude::*;
use rand::Rng;

fn valid_params() -> impl Strategy<Value = GeometryParams> {
    (0.501f64..0.7065, 0.01f64..0.99).prop_map(|(rho, frac)| {
        let lambda = (4.0 * rho * rho - 1.0).sqrt();
        GeometryParams::new(rho, frac * (1.0 - lambda) / 2.0).unwrap()
    })
}

fn summary() -> GeometrySummary {
    derive_geometry(&GeometryParams::new(reference_rho(), 0.1).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn summary_is_positive_and_additive(p in valid_params()) {
        let g = derive_geometry(&p);
        for x in [g.lambda, g.eta, g.gamma_volume, g.area_bp, g.area_bw, g.area_pw, g.core_area,
                  g.tau_bp, g.tau_bw, g.tau_pw, g.tau_total] {
            prop_assert!(x > 0.0 && x.is_finite());
        }
        prop_assert!(g.eta < 1.0);
        let lhs = 1.0 / g.tau_total;
        let rhs = 1.0 / g.tau_bp + 1.0 / g.tau_bw + 1.0 / g.tau_pw;
        prop_assert!((lhs - rhs).abs() < 1e-12 * lhs);
        let eta = 1.0 - 2.0 * (p.rho().powi(2) - (g.lambda / 2.0 + p.delta()).powi(2)).sqrt();
        prop_assert!((g.eta - eta).abs() < 1e-12);
    }

    #[test]
    fn cell_centre_is_inside(p in valid_params()) {
        prop_assert!(contains(&p, &Position::new(0.0, 0.0, 0.5)));
        prop_assert!(!contains(&p, &Position::new(-0.5, 0.0, 0.5)));
    }

    #[test]
    fn phi_lies_in_range(ep in 1e-9f64..0.5) {
        let phi = phi_bp(ep);
        prop_assert!(phi > 0.0 && phi <= std::f64::consts::SQRT_2 + 1e-15);
    }

    #[test]
    fn angle_coordinates_give_unit_vectors(alpha in 0.0f64..std::f64::consts::TAU, up in any::<bool>(), ep in 1e-6f64..0.4999) {
        let a = AngleCoord::new(alpha, if up { 1 } else { -1 }, ep).unwrap();
        for dir in [Direction::Incoming, Direction::Outgoing, Direction::Reversed] {
            prop_assert!((a.velocity(dir).norm_squared() - 1.0).abs() < 1e-12);
        }
        let d = AlphaDensity::new(ep, 1).unwrap();
        if d.unnormalized(alpha, a.sigma) > 0.0 {
            prop_assert!(a.velocity(Direction::Incoming).normal_component() < 0.0);
            prop_assert!(a.velocity(Direction::Reversed).normal_component() > 0.0);
        }
    }

    #[test]
    fn trajectories_conserve_energy_and_stay_inside(p in valid_params(), seed in any::<u64>()) {
        let mut rng = Seed(seed).rng("prop/traj", 0);
        let s0 = sample_flow(&p, &mut rng);
        // very thin cells are refused by the sampler
        prop_assume!(s0.is_ok());
        let s0 = s0.unwrap();
        let mut ok = true;
        let run = simulate_with(&p, s0, StopRule::Events(500), |e: &CollisionEvent| {
            ok &= (e.state_post.energy() - 0.5).abs() < 1e-12;
            ok &= contains_within(&p, &e.state_post.q, 1e-12);
            ok &= e.state_post.q.q1 <= e.state_post.q.q3 + 1e-12;
        });
        // tangencies are reported, never silently resolved
        match run {
            Ok(_) => prop_assert!(ok),
            Err(e) => {
                let corner = matches!(e, ballpiston::Error::CornerAmbiguity { .. });
                prop_assert!(corner, "{}", e);
            }
        }
    }

    #[test]
    fn jumps_stay_in_range(eb in 0.0f64..2.0, ep in 1e-6f64..2.0, seed in any::<u64>()) {
        let pair = EnergyPair::new(eb, ep).unwrap();
        let mut rng = Seed(seed).rng("prop/jump", 0);
        for _ in 0..50 {
            let z = sample_jump(&pair, &mut rng);
            prop_assert!(z >= -ep && z <= eb);
        }
        prop_assert!(jump_rate(&pair, &summary()) > 0.0);
    }

    #[test]
    fn kernel_is_reversible(total in 0.01f64..3.0, a in 0.001f64..0.999, b in 0.001f64..0.999) {
        let g = summary();
        let ep = a * total;
        let eb = total - ep;
        let ep_out = b * eb;
        let fwd = kernel_density(&EnergyPair { eb, ep }, ep_out, &g) / (2.0 * ep).sqrt();
        let back = kernel_density(&EnergyPair { eb: total - ep_out, ep: ep_out }, ep, &g) / (2.0 * ep_out).sqrt();
        // inputs carry rounding from the subtractions above
        let gap = eb - ep_out;
        let tol = 1e-12 + 4.0 * f64::EPSILON * total / gap;
        prop_assert!((fwd - back).abs() <= tol * fwd.abs());
    }

    #[test]
    fn moment_branches_meet(e in 1e-6f64..10.0) {
        let g = summary();
        let below = moments(&EnergyPair { eb: e, ep: e }, &g);
        let above = moments(&EnergyPair { eb: e * (1.0 + 1e-14), ep: e }, &g);
        // the wide branch moves like sqrt(eb - ep) off the diagonal
        let tol = 1e-6;
        prop_assert!((below.f - above.f).abs() < tol * below.f);
        prop_assert!((below.j - above.j).abs() < tol * below.j.abs());
        prop_assert!((below.h - above.h).abs() < tol * below.h);
    }

    #[test]
    fn divergence_is_never_negative(counts in proptest::collection::vec(0u64..50, 20), ep in 0.01f64..0.49) {
        let mut h = Histogram::new(ep, 10).unwrap();
        let mut k = 0;
        for b in h.branches.iter_mut() {
            for c in b.counts.iter_mut() {
                *c = counts[k];
                k += 1;
            }
        }
        h.total = h.branches.iter().flat_map(|b| b.counts.iter()).sum();
        let d = AlphaDensity::new(ep, 0).unwrap();
        prop_assert!(kl_divergence(&h, |a, s| d.density(a, s)).unwrap() >= -1e-12);
    }

    #[test]
    fn seeds_replay(seed in any::<u64>(), stream in 0u64..1000) {
        let mut a = Seed(seed).rng("prop/seed", stream);
        let mut b = Seed(seed).rng("prop/seed", stream);
        for _ in 0..8 {
            prop_assert_eq!(a.random::<u64>(), b.random::<u64>());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn master_step_conserves_probability(weights in proptest::collection::vec(0.0f64..1.0, 12), frac in 0.01f64..0.49) {
        let g = summary();
        let op = MasterOperator::new(&g, 1.0, 12).unwrap();
        let total: f64 = weights.iter().sum::<f64>() + 1e-3;
        let mut p = EnergyGridDensity {
            total: 1.0,
            probabilities: weights.iter().map(|w| (w + 1e-3 / 12.0) / total).collect(),
        };
        let dt = frac / op.max_out_rate();
        for _ in 0..20 {
            let before: f64 = p.probabilities.iter().sum();
            op.step(&mut p, dt).unwrap();
            prop_assert!((p.probabilities.iter().sum::<f64>() - before).abs() < 1e-12);
            prop_assert!(p.probabilities.iter().all(|&x| x >= 0.0));
        }
    }
}
