//! Pruning experiments, downstream classifier evaluation and renderer
//! benchmarks.

mod bench;
mod eval;
mod prune;

pub use bench::{
    bench_render, correctness_gate, random_bench_set, write_bench_csv, BenchOptions, BenchPoint,
    BenchRow, RenderPath, BENCH_CSV_HEADER, GATE_TOLERANCE,
};
pub use eval::{render_dataset, train_eval_classifier, EvalSpec};
pub use prune::{importance_score, prune_dataset, PruneMode, PruneStrategy};
