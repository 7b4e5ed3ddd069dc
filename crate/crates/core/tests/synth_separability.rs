use ndarray::Array2;
use roadvis::experiment::{DownstreamConfig, LogisticRegression};
use roadvis::features::{build_features, FeatureSpec};
use roadvis::raster::load_manifest;
use roadvis::synth::{generate_synthetic, write_synthetic, SynthConfig};

/// A linear classifier on the raster histograms alone recovers the road
/// class of held-out edges of the default city.
#[test]
fn default_city_is_linearly_separable_from_imagery() {
    let cfg = SynthConfig::default();
    let city = generate_synthetic(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let paths = write_synthetic(&city, dir.path()).unwrap();
    let channels = load_manifest(&paths.manifest).unwrap();
    let spec = FeatureSpec::default().with_vision(true);
    let table = build_features(&city.graph, &spec, Some(&channels), None).unwrap();

    let vision = 4 * spec.bins;
    let first = spec.dimension() - vision;
    let n = table.rows.len();
    let x = Array2::from_shape_fn((n, vision), |(i, j)| table.rows[i].values[first + j]);
    let y: Vec<usize> = table
        .rows
        .iter()
        .map(|r| city.labels[&r.edge_id] as usize)
        .collect();

    // Whole streets stay together: both directions of an edge share a fold.
    let fold = |i: usize| (i / 2) % 5;
    let train: Vec<usize> = (0..n).filter(|&i| fold(i) != 0).collect();
    let test: Vec<usize> = (0..n).filter(|&i| fold(i) == 0).collect();
    let labels: Vec<usize> = train.iter().map(|&i| y[i]).collect();
    let lr = LogisticRegression::fit(&x, &labels, &train, 8, &DownstreamConfig::default()).unwrap();
    let pred = lr.predict(&x).unwrap();
    let hits = test.iter().filter(|&&i| pred[i] == y[i]).count();
    let acc = hits as f64 / test.len() as f64;
    assert!(acc >= 0.9, "vision-only accuracy {acc:.3}");
}
