//! Scratch probe used during development; run with
//! `cargo run --release -p twogrid --example probe -- <what>`.

use std::time::Instant;

use twogrid::grid::Grid2D;
use twogrid::problems::case_i;
use twogrid::schemes::{run, GridSetup, RunConfig, SchemeKind, TimeSpec};
use twogrid::timegrid::TimeMesh;

fn main() {
    let what = std::env::args().nth(1).unwrap_or_else(|| "table1".into());
    match what.as_str() {
        "table1" => {
            let p = case_i();
            for (n, nh) in [(80usize, 100usize), (180, 150)] {
                let t0 = Instant::now();
                let g = Grid2D::with_origin(nh, nh, p.origin, p.lengths, p.bc).unwrap();
                let mesh = TimeMesh::uniform(p.t_end, n).unwrap();
                let report = run(
                    &p,
                    &GridSetup::Single(g),
                    &TimeSpec::Mesh(mesh),
                    &RunConfig::new(SchemeKind::Nonlinear),
                )
                .unwrap();
                let lin: usize = report.steps.iter().map(|s| s.linear_iters).sum();
                let newt: usize = report.steps.iter().map(|s| s.newton_iters).sum();
                println!(
                    "nonlinear (N={n}, Nh={nh}): err={:.4e}  newton={newt} lin_iters={lin}  [{:.1}s]",
                    report.final_error.unwrap(),
                    t0.elapsed().as_secs_f64()
                );
            }
        }
        "table1_tg" => {
            let p = case_i();
            for (n, nh) in [(80usize, 100usize), (180, 150)] {
                let t0 = Instant::now();
                let pair = p.grid_pair(nh / 10, 10).unwrap();
                let mesh = TimeMesh::uniform(p.t_end, n).unwrap();
                let report = run(
                    &p,
                    &GridSetup::Pair(pair),
                    &TimeSpec::Mesh(mesh),
                    &RunConfig::new(SchemeKind::TwoGrid),
                )
                .unwrap();
                println!(
                    "two_grid (N={n}, Nh={nh}): err={:.4e}  [{:.1}s]",
                    report.final_error.unwrap(),
                    t0.elapsed().as_secs_f64()
                );
            }
        }
        other => eprintln!("unknown probe {other}"),
    }
}
