use eigv_core::datagen::{generate_corpus, GenConfig, Sample, SplitTag, TrainView};
use eigv_core::trainkit::{evaluate, train, ModelDims, ModelParams, TrainConfig, TrainMode};

fn report(label: &str, params: &ModelParams<f32>, corpus: &eigv_core::datagen::Corpus) {
    let ood = evaluate(params, corpus.split(SplitTag::TestOod)).unwrap();
    let iid = evaluate(params, corpus.split(SplitTag::TestIid)).unwrap();
    println!(
        "{label}: iid {:.3} | ood {:.3} iou {:.3}",
        iid.accuracy.unwrap(),
        ood.accuracy.unwrap(),
        ood.grounding_iou.unwrap()
    );
}

#[test]
#[ignore]
fn timing() {
    let corpus = generate_corpus(&GenConfig::default()).unwrap();
    let dims = ModelDims::for_corpus(&corpus.config, 64);
    let views: Vec<TrainView<'_>> = corpus
        .split(SplitTag::Train)
        .iter()
        .map(Sample::train_view)
        .collect();
    let base = TrainConfig {
        epochs: 50,
        lr: 3e-4,
        patience: 1000,
        ..TrainConfig::default()
    };

    for (mode, seed) in [
        (TrainMode::Eigv, 0),
        (TrainMode::Eigv, 1),
        (TrainMode::ErmBaseline, 0),
        (TrainMode::MixupBaseline, 0),
    ] {
        let mut params = ModelParams::init(dims, seed).unwrap();
        let cfg = TrainConfig { mode, seed, ..base };
        train(&mut params, &views, corpus.split(SplitTag::Val), &cfg).unwrap();
        report(&format!("{mode:?} s{seed}"), &params, &corpus);
    }
}
