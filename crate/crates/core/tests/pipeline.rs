use eeginterp::attribution::{attribute, channel_contribution, Method};
use eeginterp::evaluation::{aggregate, evaluate_map, EvalConfig};
use eeginterp::models::{build_interpretable_cnn_with, compute_batch_stats, init_weights, predict, InterpretableCnnConfig};
use eeginterp::synth::{generate_dataset, split_leave_one_subject_out, ElectrodeLayout, SynthConfig};
use eeginterp::train::{train, TrainConfig};
use eeginterp::viz::{process, render_sample_view, render_topomap, PipelineConfig};

fn small_config() -> SynthConfig {
    let mut cfg = SynthConfig::two_class_demo(31);
    cfg.subjects = 3;
    cfg.samples_per_class = 12;
    cfg.length = 256;
    cfg
}

#[test]
fn synth_train_attribute_render() {
    let ds = generate_dataset(&small_config()).unwrap();
    let (train_set, test) = split_leave_one_subject_out(&ds, 2).unwrap();
    let arch = InterpretableCnnConfig {
        pointwise_filters: 8,
        depth_multiplier: 2,
        temporal_kernel: 32,
    };
    let mut net = build_interpretable_cnn_with::<f32>(ds.channels(), ds.length, ds.classes(), &arch).unwrap();
    init_weights(&mut net, 5);
    let cfg = TrainConfig {
        epochs: 8,
        batch_size: 8,
        learning_rate: 3e-3,
        seed: 5,
        ..TrainConfig::default()
    };
    let (net, history) = train(&net, &train_set.inputs(), &train_set.labels(), &cfg).unwrap();
    assert_eq!(history.epochs.len(), 8);
    let stats = compute_batch_stats(&net, &test.inputs()).unwrap();
    let correct = test
        .samples
        .iter()
        .filter(|s| predict(&net, &s.data, &stats).unwrap().0 == s.label)
        .count();
    assert!(correct * 4 >= test.samples.len() * 3, "{correct}/{}", test.samples.len());

    let layout = ElectrodeLayout::default_30().select(&ds.channel_names).unwrap();
    let eval = EvalConfig {
        trials: 20,
        seed: 1,
        ..EvalConfig::default()
    };
    let sample = &test.samples[0];
    let mut records = Vec::new();
    for m in Method::all() {
        let map = attribute(&net, &sample.data, &stats, &m.into(), None).unwrap();
        assert_eq!(map.values.shape(), [ds.channels(), ds.length]);
        assert!(map.values.is_finite(), "{m}");
        if m == Method::Saliency {
            assert!(map.values.data().iter().all(|v| *v >= 0.0));
        }
        let channel = channel_contribution(&map);
        let processed = process(&map, &channel, &PipelineConfig::default()).unwrap();
        let svg = render_sample_view(&sample.data, &processed, &ds.channel_names, "header").unwrap();
        assert_eq!(svg.matches("class=\"trace\"").count(), ds.channels());
        let topo = render_topomap(&processed.channel, &layout, m.label()).unwrap();
        assert!(topo.starts_with("<svg") || topo.starts_with("<?xml"));
        records.push(evaluate_map(&net, &sample.data, &stats, &map, sample.id, &eval).unwrap());
    }
    let summary = aggregate(&records).unwrap();
    assert_eq!(summary.methods.len(), 7);
}
