//! Two independent routes to the global minimum of a ReLU network: the big-M
//! branch-and-bound and the exhaustive region enumeration. They must agree.

mod common;

use reluopt::bounds::ia_bounds;
use reluopt::milp::{obbt, solve_min, BnbOptions, BnbStatus, ObbtOptions};
use reluopt::regions::{enumerate, region_oracle_min, EnumerateOptions};

#[test]
fn solver_matches_region_oracle_on_random_nets() {
    for seed in 0..12u64 {
        let shape: &[usize] = match seed % 3 {
            0 => &[2, 8, 6, 1],
            1 => &[2, 10, 10, 10, 1],
            _ => &[2, 6, 6, 1],
        };
        let net = common::random_relu_net(seed, shape, vec![(-1.0, 1.0), (-1.0, 1.0)]);
        let bounds = ia_bounds(&net);
        let res = solve_min(&net, &bounds, &BnbOptions::default()).unwrap();
        assert_eq!(res.status, BnbStatus::Optimal, "seed {seed}");

        let atlas = enumerate(&net, &EnumerateOptions::default()).unwrap();
        let (x_star, oracle) = region_oracle_min(&net, &atlas).unwrap();
        assert!(
            (res.objective - oracle).abs() <= 1e-6 * oracle.abs().max(1.0),
            "seed {seed}: bnb {} vs oracle {oracle} (at {x_star:?}, {} regions, {} nodes)",
            res.objective,
            atlas.regions.len(),
            res.nodes
        );
        let replay = net.forward(&res.x).unwrap()[0];
        assert!((replay - res.objective).abs() <= 1e-6);
    }
}

#[test]
fn solver_agrees_after_obbt_tightening() {
    for seed in 20..24u64 {
        let net = common::random_relu_net(seed, &[2, 8, 8, 1], vec![(-1.0, 1.0), (-1.0, 1.0)]);
        let ia = ia_bounds(&net);
        let tightened = obbt(&net, &ia, &ObbtOptions::default()).unwrap();
        let res_ia = solve_min(&net, &ia, &BnbOptions::default()).unwrap();
        let res_ob = solve_min(&net, &tightened.bounds, &BnbOptions::default()).unwrap();
        assert!(
            (res_ia.objective - res_ob.objective).abs() <= 1e-6 * res_ia.objective.abs().max(1.0),
            "seed {seed}: IA {} vs OBBT {}",
            res_ia.objective,
            res_ob.objective
        );
        assert!(res_ob.nodes <= res_ia.nodes.max(3), "tightening should not blow up the tree");
    }
}
