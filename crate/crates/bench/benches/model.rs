use copylab::analysis::{eval_copy_accuracy, induction_score_table, EpOptions};
use copylab::data::{gen_copy_eval, gen_probe, CopyEvalSpec, Corpus, CorpusSpec};
use copylab::model::{loss_and_grads, ModelConfig, ModelWeights};
use copylab::numeric::Rng;
use criterion::{black_box, criterion_group, criterion_main, Criterion};

/// The small model the acceptance runs train.
fn small() -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        n_heads: 2,
        d_model: 48,
        d_ff: 96,
        vocab_size: 512,
        ctx_len: 48,
        ..ModelConfig::desk()
    }
}

fn bench_train_step(c: &mut Criterion) {
    let mut g = c.benchmark_group("loss_and_grads_f32");
    g.sample_size(20);
    for (name, cfg, rows) in [("small_b32", small(), 32), ("desk_b4", ModelConfig::desk(), 4)] {
        let w = ModelWeights::<f32>::init(&cfg, &mut Rng::new(1)).unwrap();
        let corpus = Corpus::new(&CorpusSpec::per_doc_markov(cfg.vocab_size, cfg.ctx_len + 1, 4)).unwrap();
        let batch = corpus.batch(&mut Rng::new(2), rows);
        g.bench_function(name, |b| b.iter(|| loss_and_grads(black_box(&w), &batch, None).unwrap()));
    }
    g.finish();
}

fn bench_analysis(c: &mut Criterion) {
    let cfg = small();
    let w = ModelWeights::<f32>::init(&cfg, &mut Rng::new(1)).unwrap();
    let spec = CopyEvalSpec {
        n_sequences: 5,
        prefix_len: 2,
        suffix_len: 2,
        mean_seq_len: 6,
        jitter: 1,
        n_samples: 10,
        query_stride: 1,
        vocab_size: cfg.vocab_size,
    };
    let bench = gen_copy_eval(&spec, &mut Rng::new(3)).unwrap();
    c.bench_function("eval_copy_accuracy_small", |b| {
        b.iter(|| eval_copy_accuracy(black_box(&w), &bench).unwrap())
    });
    let w64 = w.cast::<f64>();
    let mut rng = Rng::new(4);
    let probes: Vec<_> = (0..4).map(|_| gen_probe(24, cfg.vocab_size, &mut rng).unwrap()).collect();
    c.bench_function("induction_score_table_small", |b| {
        b.iter(|| induction_score_table(black_box(&w64), &probes, 0, EpOptions::default()).unwrap())
    });
}

criterion_group!(benches, bench_train_step, bench_analysis);
criterion_main!(benches);
