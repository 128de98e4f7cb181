use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smtj_ising::anneal::{run, InitialState, RunConfig, Schedule};
use smtj_ising::decomposition::{
    pipeline_run, recursive_partition, stitch_groups, window_refine, PipelineConfig, Rect,
};
use smtj_ising::ising::IsingModel;
use smtj_ising::tsp::{annealing_w, build_tsp, Decoded, EncodingVariant, Tour, TspInstance};
use smtj_ising::tsplib;

fn quick_config(seed: u64) -> PipelineConfig {
    PipelineConfig {
        group_run: RunConfig::with_schedule(Schedule::ramp_hold(0.0, 0.7, 50, 1500)),
        group_restarts: 1,
        window_run: RunConfig::with_schedule(Schedule::ramp_hold(0.0, 0.7, 50, 600)),
        window_restarts: 1,
        window_passes: 2,
        attempts: 1,
        seed,
        ..PipelineConfig::default()
    }
}

fn is_permutation(order: &[usize], n: usize) -> bool {
    let mut sorted = order.to_vec();
    sorted.sort_unstable();
    sorted == (0..n).collect::<Vec<_>>()
}

fn random_order(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn tour_encoding_round_trips(n in 3usize..8, seed in any::<u64>(), fixed in any::<bool>()) {
        let inst = TspInstance::random_uniform(n, &mut ChaCha8Rng::seed_from_u64(seed));
        let variant = if fixed { EncodingVariant::FixedStart } else { EncodingVariant::Full };
        let enc = build_tsp(&inst, variant, annealing_w(&inst)).unwrap();
        let order = random_order(n, seed ^ 1);
        let decoded = enc.decode(&enc.encode_tour(&order).unwrap()).unwrap();
        let Decoded::Tour(t) = decoded else { panic!("valid tour decoded as violation") };
        let expected = inst.tour_length(&order).unwrap();
        prop_assert!((t.length - expected).abs() < 1e-9);
        prop_assert_eq!(t.rotated_to(order[0]).order.len(), n);
    }

    /// Valid tours differ in energy only through `w` times their length.
    #[test]
    fn tour_energy_is_affine_in_length(n in 3usize..8, seed in any::<u64>()) {
        let inst = TspInstance::random_uniform(n, &mut ChaCha8Rng::seed_from_u64(seed));
        let w = annealing_w(&inst);
        let enc = build_tsp(&inst, EncodingVariant::Full, w).unwrap();
        let a = random_order(n, seed ^ 2);
        let b = random_order(n, seed ^ 3);
        let de = enc.tour_energy(&a).unwrap() - enc.tour_energy(&b).unwrap();
        let dl = inst.tour_length(&a).unwrap() - inst.tour_length(&b).unwrap();
        prop_assert!((de - w * dl).abs() < 1e-9 * (1.0 + de.abs()));
    }

    #[test]
    fn solution_is_min_of_best_and_final(n in 2usize..10, seed in any::<u64>(), iters in 1usize..200) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = IsingModel::random(n, 2.0, &mut rng);
        let config = RunConfig::with_schedule(Schedule::linear(0.0, 2.0, iters)).seeded(seed);
        let r = run(&model, &InitialState::Random, &config).unwrap();
        prop_assert_eq!(r.solution_energy, r.best_energy.min(r.final_energy));
        prop_assert!(r.best_energy <= r.final_energy);
        prop_assert_eq!(r.iterations_run, iters);
    }

    #[test]
    fn window_refinement_never_lengthens(n in 12usize..30, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = TspInstance::random_uniform(n, &mut rng);
        let tour = Tour::new(&inst, random_order(n, seed ^ 4)).unwrap();
        let (x, y) = (rng.gen_range(0.0..0.6), rng.gen_range(0.0..0.6));
        let rect = Rect { x_min: x, y_min: y, x_max: x + 0.4, y_max: y + 0.4 };
        let (next, _) = window_refine(&inst, &tour, &rect, &quick_config(seed), seed).unwrap();
        prop_assert!(is_permutation(&next.order, n));
        prop_assert!(next.length <= tour.length + 1e-9);
        prop_assert!((inst.tour_length(&next.order).unwrap() - next.length).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn partition_respects_budget_and_stitch_is_a_tour(n in 10usize..40, seed in any::<u64>()) {
        let inst = TspInstance::random_uniform(n, &mut ChaCha8Rng::seed_from_u64(seed));
        let config = quick_config(seed);
        let (partition, effort) = recursive_partition(&inst, &config).unwrap();
        partition.validate(n).unwrap();
        prop_assert!(partition.groups.iter().all(|g| g.len() * g.len() <= 81));
        prop_assert!(effort.peak_spins <= 81);
        let tours: Vec<Vec<usize>> = partition
            .groups
            .iter()
            .map(|g| {
                let mut g = g.clone();
                g.reverse();
                g
            })
            .collect();
        let t = stitch_groups(&inst, &partition, &tours).unwrap();
        prop_assert!(is_permutation(&t.order, n));
    }

    #[test]
    fn pipeline_lengths_never_increase(n in 12usize..36, seed in any::<u64>()) {
        let inst = TspInstance::random_uniform(n, &mut ChaCha8Rng::seed_from_u64(seed));
        let out = pipeline_run(&inst, &quick_config(seed)).unwrap();
        let r = &out.report;
        prop_assert!(is_permutation(&out.tour.order, n));
        let mut prev = r.stitched_length;
        for &l in &r.pass_lengths {
            prop_assert!(l <= prev + 1e-9);
            prev = l;
        }
        prop_assert!((r.final_length - out.tour.length).abs() < 1e-12);
        prop_assert!(r.total.peak_spins <= 81);
    }

    #[test]
    fn tsplib_coordinates_round_trip(coords in prop::collection::vec((-1e4f64..1e4, -1e4f64..1e4), 1..40)) {
        let mut text = format!("NAME : prop\nTYPE : TSP\nDIMENSION : {}\nEDGE_WEIGHT_TYPE : EUC_2D\nNODE_COORD_SECTION\n", coords.len());
        for (i, (x, y)) in coords.iter().enumerate() {
            text.push_str(&format!("{} {x:?} {y:?}\n", i + 1));
        }
        text.push_str("EOF\n");
        let file = tsplib::parse(&text).unwrap();
        prop_assert_eq!(file.dimension, coords.len());
        for ((id, x, y), (i, &(ex, ey))) in file.node_coords.iter().zip(coords.iter().enumerate()) {
            prop_assert_eq!(*id, i + 1);
            prop_assert_eq!((*x, *y), (ex, ey));
        }
    }
}
