use fieldsim::field::*;
use fieldsim::geom::{v3, Aabb};
use fieldsim::nn::ParamSet;
use fieldsim::render::*;
use fieldsim::rng::RngStream;
use std::time::Instant;

fn main() {
    let arch = FieldArchitecture::desk_default(3);
    let bounds = Aabb::new(v3(-3.0, -3.0, -1.0), v3(15.0, 3.0, 3.0));
    let params = init_params::<f32>(&arch, bounds, 1).unwrap();
    let emb = params.embedding_row(0);
    let mut scratch = FieldScratch::default();
    let mut rng = RngStream::seed(2);

    // forward-only throughput
    let n = 200_000;
    let pts: Vec<_> = (0..n).map(|_| v3(rng.uniform_in(-2.0, 14.0), rng.uniform_in(-2.5, 2.5), rng.uniform_in(-0.5, 2.5))).collect();
    let dir = v3(1.0, 0.0, 0.0);
    let t0 = Instant::now();
    let mut acc = 0.0f32;
    for p in &pts {
        let o = field_forward(&params, *p, dir, &emb, &mut scratch).unwrap();
        acc += o.sigma;
    }
    let dt = t0.elapsed().as_secs_f64();
    println!("forward: {:.1} k evals/s  ({:.2} us/eval) [acc {acc}]", n as f64 / dt / 1e3, dt / n as f64 * 1e6);

    // forward+backward via render path
    let cfg = RenderConfig { samples_per_ray: 64, stratified: true, term_transmittance: 1e-4, ..Default::default() };
    let mut work = RayWork::default();
    let mut tape = params.zeros_like();
    let mut demb = vec![0.0f32; 32];
    let n_rays = 2000;
    let t0 = Instant::now();
    for i in 0..n_rays {
        let mut rr = rng.substream(i);
        let ray = Ray { origin: v3(0.5, rng.uniform_in(-1.0, 1.0), 0.6), direction: v3(1.0, rng.uniform_in(-0.3, 0.3), rng.uniform_in(-0.2, 0.2)).normalized(), t_near: 0.05, t_far: 20.0 };
        let px = render_pixel(&params, &emb, &ray, &cfg, Some(&mut rr), &mut work).unwrap();
        render_backward(&params, &cfg, [px[0]*0.01, px[1]*0.01, px[2]*0.01], &mut work, &mut tape, &mut demb).unwrap();
    }
    let dt = t0.elapsed().as_secs_f64();
    println!("train ray fwd+bwd (~64 evals, untrained so no early term): {:.2} ms/ray -> batch1024 = {:.2} s/iter", dt / n_rays as f64 * 1e3, dt / n_rays as f64 * 1024.0);
}
