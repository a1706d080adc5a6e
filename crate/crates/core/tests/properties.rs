//! Property tests over randomized inputs for the pure building blocks.

use gaitnav::curriculum::{CurriculumConfig, CurriculumState};
use gaitnav::decoder::{decode_continuous, quantize_gait, CommandBounds, Decoder, DecoderConfig, HighLevelAction};
use gaitnav::lowlevel::{ActionMapper, ActionMapperConfig, ProprioState};
use gaitnav::reward::{self, RewardConfig, RewardInputs, RewardWeights};
use gaitnav::terrain::{difficulty_map, sample_tile, DifficultyParam, TerrainConfig, TerrainFamily, Zone};
use gaitnav::trainer::gae::{compute_gae, normalize_advantages};
use gaitnav::trainer::policy::gaussian_entropy;
use ndarray::Array1;
use proptest::prelude::*;

fn family() -> impl Strategy<Value = TerrainFamily> {
    prop::sample::select(TerrainFamily::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn difficulty_map_hits_endpoints_and_is_monotone(
        lo in -10.0f64..10.0,
        span in 0.0f64..10.0,
        d1 in 0.0f64..=1.0,
        d2 in 0.0f64..=1.0,
    ) {
        let p = DifficultyParam::new(lo, lo + span);
        prop_assert_eq!(difficulty_map(0.0, p).unwrap(), p.min);
        prop_assert_eq!(difficulty_map(1.0, p).unwrap(), p.max);
        let (a, b) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
        prop_assert!(difficulty_map(a, p).unwrap() <= difficulty_map(b, p).unwrap());
    }

    #[test]
    fn difficulty_outside_unit_interval_is_rejected(d in prop_oneof![-5.0f64..-1e-9, 1.0000001f64..5.0]) {
        prop_assert!(difficulty_map(d, DifficultyParam::new(0.0, 1.0)).is_err());
    }

    #[test]
    fn decoded_commands_stay_in_bounds(a in prop::array::uniform13(-1e3f64..1e3)) {
        let decoder = Decoder::new(&DecoderConfig::default()).unwrap();
        let c = decoder.decode(&HighLevelAction(a)).unwrap();
        for (v, ch) in c.continuous.iter().zip(&decoder.bounds().channels) {
            prop_assert!(ch.lower <= *v && *v <= ch.upper);
        }
        prop_assert!(c.gait.index() < 4);
        prop_assert_eq!(c.gait_embedding, c.gait.embedding());
        // Decoding is pure.
        prop_assert_eq!(decoder.decode(&HighLevelAction(a)).unwrap(), c);
    }

    #[test]
    fn continuous_decode_is_strictly_increasing(
        x in prop::array::uniform12(-1.0f64..1.0),
        j in 0usize..12,
        dx in 1e-6f64..0.5,
    ) {
        let bounds = CommandBounds::default();
        let mut y = x;
        y[j] = (x[j] + dx).min(1.0);
        prop_assume!(y[j] > x[j]);
        let a = decode_continuous(&x, &bounds).unwrap();
        let b = decode_continuous(&y, &bounds).unwrap();
        prop_assert!(b[j] > a[j]);
    }

    #[test]
    fn gait_bins_are_quarter_intervals(x in -1.0f64..=1.0) {
        let expected = ((x + 1.0) * 2.0).floor().min(3.0) as usize;
        prop_assert_eq!(quantize_gait(x).index(), expected);
    }

    #[test]
    fn joint_targets_stay_near_nominal(a in prop::array::uniform12(-50.0f64..50.0)) {
        let cfg = ActionMapperConfig::default();
        let m = ActionMapper::new(&cfg).unwrap();
        let q = m.map(&a);
        for j in 0..12 {
            prop_assert!((q[j] - cfg.q0[j]).abs() <= cfg.alpha * cfg.a_max + 1e-12);
        }
    }

    #[test]
    fn reward_terms_stay_in_range_and_total_is_linear(
        d in 0.0f64..12.0,
        yaw in -4.0f64..4.0,
        yaw_star in -4.0f64..4.0,
        step in 0usize..300,
        vel in prop::array::uniform3(-2.0f64..2.0),
        height in 0.0f64..0.5,
        action in prop::collection::vec(-2.0f64..2.0, 13),
        prev_action in prop::collection::vec(-2.0f64..2.0, 13),
        cmds in prop::collection::vec(-1.0f64..1.0, 45),
        force in prop::array::uniform3(-100.0f64..100.0),
        speed in 0.0f64..1.0,
    ) {
        let cfg = RewardConfig::default();
        let mut prop_state = ProprioState::at_rest(height);
        prop_state.base_lin_vel = vel;
        let forces = [force];
        let inputs = RewardInputs {
            d_t: d,
            yaw,
            yaw_star,
            step,
            prop: &prop_state,
            action: &action,
            prev_action: &prev_action,
            command: &cmds[..15],
            prev_command: &cmds[15..30],
            prev_command_2: &cmds[30..],
            contact_forces: &forces,
            speed,
        };
        let b = reward::total(&inputs, &cfg).unwrap();
        let raw = |n: &str| b.raw(n).unwrap();
        prop_assert!((0.0..=1.0 + cfg.shape_a).contains(&raw("goal_dist")));
        prop_assert!((-1.0..=1.0).contains(&raw("face")));
        prop_assert!((0.0..=1.0).contains(&raw("stable")));
        let arrive = raw("arrive");
        prop_assert!(arrive == 0.0 || (cfg.b_0..=cfg.b_0 + cfg.b_1).contains(&arrive));
        for n in ["action_rate", "cmd_sm1", "cmd_sm2", "col", "lazy"] {
            prop_assert!(raw(n) >= 0.0, "{} negative", n);
        }
        prop_assert!((b.recompute_total() - b.total).abs() <= 1e-12);

        let doubled = RewardConfig {
            weights: RewardWeights::from_array(cfg.weights.as_array().map(|w| 2.0 * w)),
            ..cfg.clone()
        };
        let b2 = reward::total(&inputs, &doubled).unwrap();
        prop_assert!((b2.total - 2.0 * b.total).abs() <= 1e-12 * (1.0 + b.total.abs()));
    }

    #[test]
    fn goal_distance_reward_is_lipschitz(d in 0.0f64..12.0, h in 1e-6f64..1e-2) {
        let cfg = RewardConfig::default();
        // d/dp of p + a (1 - e^{-b p}) is at most 1 + a b, and dp/dd = 1 / R_map.
        let lip = (1.0 + cfg.shape_a * cfg.shape_b) / cfg.r_map;
        let jump = (reward::r_goal_dist(d + h, &cfg) - reward::r_goal_dist(d, &cfg)).abs();
        prop_assert!(jump <= lip * h + 1e-12);
    }

    #[test]
    fn gae_reduces_to_td_and_monte_carlo(
        r in prop::collection::vec(-1.0f64..1.0, 24),
        v in prop::collection::vec(-2.0f64..2.0, 24),
        bootstrap in -2.0f64..2.0,
        gamma in 0.5f64..0.999,
    ) {
        let n = r.len();
        let no = vec![false; n];
        let fv = vec![0.0; n];
        let (td, _) = compute_gae(&r, &v, bootstrap, &no, &no, &fv, gamma, 0.0).unwrap();
        for t in 0..n {
            let next = if t + 1 < n { v[t + 1] } else { bootstrap };
            prop_assert!((td[t] - (r[t] + gamma * next - v[t])).abs() <= 1e-12);
        }
        let (mc, _) = compute_gae(&r, &v, bootstrap, &no, &no, &fv, gamma, 1.0).unwrap();
        for t in 0..n {
            let mut g = gamma.powi((n - t) as i32) * bootstrap;
            for k in t..n {
                g += gamma.powi((k - t) as i32) * r[k];
            }
            prop_assert!((mc[t] - (g - v[t])).abs() <= 1e-9);
        }
    }

    #[test]
    fn normalized_advantages_have_unit_moments(mut adv in prop::collection::vec(-100.0f64..100.0, 8..256)) {
        let spread = adv.iter().cloned().fold(f64::MIN, f64::max) - adv.iter().cloned().fold(f64::MAX, f64::min);
        prop_assume!(spread > 1e-3);
        normalize_advantages(&mut adv);
        let n = adv.len() as f64;
        let mean = adv.iter().sum::<f64>() / n;
        let std = (adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n).sqrt();
        prop_assert!(mean.abs() < 1e-6);
        prop_assert!((std - 1.0).abs() <= 1e-3);
    }

    #[test]
    fn gaussian_entropy_matches_closed_form(log_std in prop::collection::vec(-3.0f64..1.0, 1..16)) {
        let want: f64 = log_std
            .iter()
            .map(|l| l + 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln())
            .sum();
        prop_assert!((gaussian_entropy(Array1::from(log_std).view()) - want).abs() <= 1e-9);
    }

    #[test]
    fn curriculum_windows_and_levels_stay_consistent(
        outcomes in prop::collection::vec((0usize..4, any::<bool>()), 0..400),
    ) {
        let mut st = CurriculumState::new(&CurriculumConfig::default(), 4, 10).unwrap();
        let mut since_change = [0usize; 4];
        for (env, success) in outcomes {
            let others: Vec<_> = (0..4).filter(|&e| e != env).map(|e| (st.level(e).unwrap(), st.window(e).unwrap().to_vec())).collect();
            let change = st.record_outcome(env, success).unwrap();
            since_change[env] += 1;
            if let Some(ch) = change {
                prop_assert!(st.window(env).unwrap().is_empty());
                prop_assert_eq!(since_change[env], 10);
                prop_assert!(ch.to < 10);
                since_change[env] = 0;
            }
            prop_assert!(st.window(env).unwrap().len() < 10);
            let after: Vec<_> = (0..4).filter(|&e| e != env).map(|e| (st.level(e).unwrap(), st.window(e).unwrap().to_vec())).collect();
            prop_assert_eq!(others, after);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn tiles_respect_zone_contracts(f in family(), level in 0usize..10, seed in any::<u64>()) {
        let cfg = TerrainConfig::default();
        let tile = sample_tile(&cfg, level, f, seed).unwrap();
        let field = &tile.field;
        prop_assert_eq!((field.nx, field.ny), ((cfg.length_m / cfg.cell_size).ceil() as usize, (cfg.width_m / cfg.cell_size).ceil() as usize));
        prop_assert_eq!(tile.difficulty, level as f64 / 9.0);
        for iy in 0..field.ny {
            for ix in 0..field.nx {
                let i = field.index(ix, iy);
                if matches!(field.zones[i], Zone::Start | Zone::Goal | Zone::Safety) {
                    prop_assert_eq!(field.heights[i], 0.0);
                    prop_assert!(field.support[i]);
                }
                if f != TerrainFamily::Gap {
                    prop_assert!(field.support[i]);
                }
            }
        }
        let zone_at = |p: [f64; 2]| {
            let ix = (p[0] / cfg.cell_size) as usize;
            let iy = (p[1] / cfg.cell_size) as usize;
            field.zone(ix, iy)
        };
        prop_assert_eq!(zone_at(tile.start_pos), Zone::Start);
        prop_assert_eq!(zone_at(tile.goal_pos), Zone::Goal);
        prop_assert!(tile.start_pos != tile.goal_pos);
        // Same inputs give the same tile.
        let again = sample_tile(&cfg, level, f, seed).unwrap();
        prop_assert_eq!(&again.field.heights, &field.heights);
        prop_assert_eq!(&again.field.support, &field.support);
    }
}
