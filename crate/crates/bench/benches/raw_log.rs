use criterion::{black_box, criterion_group, criterion_main, Criterion};
use m2a_bench::{message, sentence};
use m2a_core::raw_store::Durability;
use m2a_core::{EvidenceRange, RawMessageStore};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn append(c: &mut Criterion) {
    let dir = std::env::temp_dir().join(format!("m2a-bench-{}", std::process::id()));
    let store = RawMessageStore::open_with(&dir, Durability::Flush).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut i = 0u64;
    c.bench_function("raw/append (flush)", |b| {
        b.iter(|| {
            i += 1;
            store.append("bench", message(i, sentence(&mut rng, 12))).unwrap()
        })
    });
    let _ = std::fs::remove_dir_all(&dir);
}

fn fetch(c: &mut Criterion) {
    let store = RawMessageStore::in_memory();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for i in 0..10_000 {
        store.append("bench", message(i, sentence(&mut rng, 12))).unwrap();
    }
    let range = EvidenceRange::new(5_000, 5_009).unwrap();
    c.bench_function("raw/fetch_range 10 of 10k", |b| {
        b.iter(|| store.fetch_range("bench", black_box(range)).unwrap())
    });
}

criterion_group!(benches, append, fetch);
criterion_main!(benches);
