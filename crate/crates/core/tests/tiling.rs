mod common;

use common::*;
use proptest::prelude::*;
use shiftflow::fixq::Dims;
use shiftflow::tiling::*;

#[test]
fn single_tile_plan_is_untiled() {
    let (o, x) = build(3, Dims::new(3, 9, 20), 4, 1, 1, 1);
    let g = o.group();
    let plan = plan_group(&g, 1000).unwrap();
    assert_eq!(plan.tiles.len(), 1);
    assert_eq!(execute_tiled(&plan, &g, &x).unwrap().output, g.run(&x).unwrap().output);
}

#[test]
fn ddr_columns_for_three_tiles() {
    let (o, x) = build(4, Dims::new(4, 6, 15), 4, 1, 1, 2);
    let g = o.group();
    let plan = plan_group(&g, 7).unwrap();
    assert_eq!(plan.tiles.len(), 3);
    let run = execute_tiled(&plan, &g, &x).unwrap();
    assert_eq!(run.ddr_columns(), 19);
    assert_eq!(run.tile_ddr_columns, vec![6, 7, 6]);
    assert_eq!(run.output, g.run(&x).unwrap().output);
}

#[test]
fn plan_dump_format() {
    let p = plan_tiles(&[(3, 1)], 10, 1, 6).unwrap();
    for (i, line) in p.to_string().lines().enumerate() {
        assert!(line.starts_with(&format!("tile {i}: cols [")), "{line}");
        assert!(line.contains(") halo("));
    }
}

#[test]
fn register_cost_examples() {
    assert_eq!(register_cost_compare(256, 2), (515, 259));
    assert_eq!(register_cost_compare(100, 1), (203, 203));
    assert_eq!(register_cost_compare(512, 4), (1027, 259));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(120))]

    #[test]
    fn tiled_equals_untiled(
        variant in 0u8..5, c in 1usize..4, n in 1usize..4, h in 3usize..8, w in 3usize..40,
        s1 in 1usize..=2, s2 in 1usize..=2, limit in 3usize..30, seed in any::<u64>(),
    ) {
        let s1 = if variant == 1 || variant == 4 { 1 } else { s1 };
        let (o, x) = build(variant, Dims::new(c, h, w), n, s1, s2, seed);
        let g = o.group();
        let Ok(plan) = plan_group(&g, limit) else { return Ok(()); };
        let tiled = execute_tiled(&plan, &g, &x).unwrap();
        prop_assert_eq!(tiled.output, g.run(&x).unwrap().output);
    }

    #[test]
    fn plans_partition_and_fit(
        w in 1usize..300, limit in 3usize..140, fused in any::<bool>(), s in 1usize..=2,
    ) {
        let stages: Vec<(usize, usize)> = if fused { vec![(1, 1), (3, s)] } else { vec![(3, s)] };
        let Ok(p) = plan_tiles(&stages, w, 1, limit) else { return Ok(()); };
        let mut next = 0;
        for t in &p.tiles {
            prop_assert_eq!(t.col_start, next);
            prop_assert_eq!(t.col_start % p.align, 0);
            prop_assert!(t.fetched_cols() <= limit);
            next = t.col_end();
        }
        prop_assert_eq!(next, w);
        let first = &p.tiles[0];
        let last = p.tiles.last().unwrap();
        prop_assert_eq!(first.halo_left, 0);
        prop_assert_eq!(last.halo_right, 0);
        let outs: usize = p.tiles.iter().map(|t| t.out_cols.len()).sum();
        prop_assert_eq!(outs, (w - 1) / s + 1);
    }

    #[test]
    fn stride_one_dw_halo_is_one_column(w in 6usize..200, limit in 5usize..60) {
        let Ok(p) = plan_tiles(&[(1, 1), (3, 1)], w, 1, limit) else { return Ok(()); };
        let k = p.tiles.len();
        for (i, t) in p.tiles.iter().enumerate() {
            prop_assert_eq!(t.halo_left, usize::from(i > 0));
            prop_assert_eq!(t.halo_right, usize::from(i + 1 < k));
        }
    }

    #[test]
    fn register_cost_falls_with_split(w in 12usize..2000, split in 1usize..4) {
        prop_assume!(w / (split + 1) >= 3);
        let (_, a) = register_cost_compare(w, split);
        let (_, b) = register_cost_compare(w, split + 1);
        prop_assert!(b < a);
    }
}

#[test]
fn infeasible_limit_is_an_error() {
    assert!(plan_tiles(&[(3, 1), (3, 1)], 50, 1, 4).is_err());
}
