use pcwinter::fixtures::{block_model, BlockModel};
use pcwinter::graph::export_dataset;

fn main() {
    let mut args = std::env::args().skip(1);
    let out = args
        .next()
        .expect("usage: synthetic OUT_DIR [NODES] [SEED]");
    let mut cfg = BlockModel::default();
    if let Some(n) = args.next() {
        cfg.nodes = n.parse().expect("NODES");
    }
    if let Some(s) = args.next() {
        cfg.seed = s.parse().expect("SEED");
    }
    let (g, split) = block_model(&cfg);
    export_dataset(&g, &split, &out).expect("export");
    println!("{out}: {} nodes, {} edges", g.num_nodes(), g.num_edges());
}
