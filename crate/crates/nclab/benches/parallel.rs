//! Parallel against sequential on the data-parallel kernels. Both paths give
//! bit-identical output, so only the timing differs.

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use nclab::basis::{BasisTruncation, HermiteBasis, SmoothFunction2D, ONE};
use nclab::kinematics::{dirac, hermitian_spectrum};
use nclab::moyal::{left_mult_matrix, sample_on, star_grid, StarConfig};
use nclab::par;
use nclab::twisted::{integrated_rep, random_packet};
use nclab::ParameterSet;
use rand::SeedableRng;

fn modes(c: &mut Criterion, name: &str, mut f: impl FnMut()) {
    let mut g = c.benchmark_group(name);
    g.sample_size(10);
    for seq in [false, true] {
        let label = if seq { "sequential" } else { "parallel" };
        g.bench_function(BenchmarkId::from_parameter(label), |b| {
            par::set_sequential(seq);
            b.iter(&mut f);
        });
    }
    par::set_sequential(false);
    g.finish();
}

fn kernels(c: &mut Criterion) {
    let p = ParameterSet::canonical();
    let cfg = StarConfig::grid(1.0, 0.5, 10.0, 256);
    let gauss = SmoothFunction2D::gaussian([0.3, -0.2], 1.0, [0.0; 2], ONE);
    let basis = HermiteBasis::unit(14);
    modes(c, "left_mult_matrix", || {
        black_box(left_mult_matrix(&gauss, &cfg, basis).unwrap());
    });

    let f = sample_on(&gauss, &cfg).unwrap();
    modes(c, "star_grid", || {
        black_box(star_grid(&f, &f, &cfg).unwrap());
    });

    let d = dirac(&p, BasisTruncation::new(40)).unwrap();
    modes(c, "dirac_spectrum_l40", || {
        black_box(hermitian_spectrum(&d));
    });

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let packet = random_packet(&mut rng, (0.4, 0.4001));
    modes(c, "integrated_rep_l4", || {
        black_box(integrated_rep(&packet, &p, HermiteBasis::unit(4)).unwrap());
    });
}

criterion_group!(benches, kernels);
criterion_main!(benches);
