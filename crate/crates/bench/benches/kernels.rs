use std::hint::black_box;
use std::num::NonZeroUsize;

use criterion::{criterion_group, criterion_main, Criterion};
use labelforge::select::DEFAULT_DRIVABLE_CLASS;
use labelforge::{confusion, generate_finetune_pairs, iou, rank_by_area, select_drivable};
use labelforge_bench::{scene, stripes};

// KITTI road frames are about 1242x375.
const W: u32 = 1242;
const H: u32 = 375;

fn rle(c: &mut Criterion) {
    let road = scene(W, H, 1).gt;
    let worst = stripes(W, H);
    let mut g = c.benchmark_group("rle");
    for (name, mask) in [("road", &road), ("stripes", &worst)] {
        let encoded = mask.to_rle();
        g.bench_function(format!("encode/{name}"), |b| {
            b.iter(|| black_box(mask).to_rle())
        });
        g.bench_function(format!("decode/{name}"), |b| {
            b.iter(|| black_box(&encoded).decode())
        });
    }
    g.finish();
}

fn pixel_metrics(c: &mut Criterion) {
    let f = scene(W, H, 2);
    let pred = f
        .proposals
        .iter()
        .max_by_key(|p| p.area())
        .unwrap()
        .mask
        .decode();
    c.bench_function("iou", |b| {
        b.iter(|| iou(black_box(&pred), black_box(&f.gt)))
    });
    c.bench_function("confusion", |b| {
        b.iter(|| confusion(black_box(&pred), black_box(&f.gt)))
    });
}

fn selection(c: &mut Criterion) {
    let f = scene(W, H, 3);
    let k = NonZeroUsize::new(10).unwrap();
    c.bench_function("rank_and_select", |b| {
        b.iter(|| {
            select_drivable(
                &rank_by_area(black_box(&f.proposals), k),
                DEFAULT_DRIVABLE_CLASS,
            )
        })
    });
    let top = rank_by_area(&f.proposals, k);
    c.bench_function("finetune_pairs", |b| {
        b.iter(|| generate_finetune_pairs(black_box(&top), &f.gt, DEFAULT_DRIVABLE_CLASS))
    });
}

criterion_group!(benches, rle, pixel_metrics, selection);
criterion_main!(benches);
