use criterion::{black_box, criterion_group, criterion_main, Criterion};

use avgen_core::corpus::{synth_corpus, CorpusConfig};
use avgen_core::metrics::wer;
use avgen_core::scorenet::{conditioning, forward, ScoreNetParams, ScoreNetShape};
use avgen_core::sde::SdeParams;
use avgen_core::signal::{istft, stft};
use avgen_core::training::TrainItem;
use avgen_core::StftConfig;

fn one_item() -> avgen_core::corpus::CorpusItem {
    let cfg = CorpusConfig {
        n_train: 1,
        n_test: 0,
        min_duration_s: 3.0,
        max_duration_s: 3.0,
        ..CorpusConfig::default()
    };
    synth_corpus(&cfg).unwrap().remove(0)
}

fn bench_stft(c: &mut Criterion) {
    let item = one_item();
    let cfg = StftConfig::default();
    c.bench_function("stft 3 s", |b| b.iter(|| stft(black_box(&item.noisy), &cfg).unwrap()));
    let spec = stft(&item.noisy, &cfg).unwrap();
    c.bench_function("istft 3 s", |b| b.iter(|| istft(black_box(&spec), &cfg, item.noisy.len()).unwrap()));
}

fn bench_forward(c: &mut Criterion) {
    let item = one_item();
    let shape = ScoreNetShape::toy();
    let params = ScoreNetParams::init(&shape, 0).unwrap();
    let ti = TrainItem::from_waveforms("b", &item.clean, &item.noisy, item.emb, &StftConfig::default(), shape.frame_multiple())
        .unwrap();
    let cond = conditioning(&params, Some(&ti.emb), ti.tokens()).unwrap();
    let level = SdeParams::default().level(0.5);
    c.bench_function("scorenet forward toy 3 s", |b| {
        b.iter(|| forward(&params, black_box(&ti.y), &ti.y, &cond, level).unwrap())
    });
}

fn bench_wer(c: &mut Criterion) {
    let a: Vec<u32> = (0..200).map(|i| (i * 7 % 12) as u32).collect();
    let h: Vec<u32> = (0..190).map(|i| (i * 5 % 12) as u32).collect();
    c.bench_function("wer 200x190", |b| b.iter(|| wer(black_box(&a), black_box(&h)).unwrap()));
}

criterion_group!(benches, bench_stft, bench_forward, bench_wer);
criterion_main!(benches);
