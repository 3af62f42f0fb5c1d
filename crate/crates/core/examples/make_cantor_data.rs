//! Regenerates `data/cantor_5000.csv`; run from the workspace root.

use wassconc::metric::write_points_csv;
use wassconc::SyntheticSampler;

fn main() {
    let sampler = SyntheticSampler::parse("uniform-cantor").unwrap();
    let pts = sampler.sample_points::<f64>(5000, 31).unwrap();
    let file = std::fs::File::create("data/cantor_5000.csv").unwrap();
    write_points_csv(&pts, file).unwrap();
}
